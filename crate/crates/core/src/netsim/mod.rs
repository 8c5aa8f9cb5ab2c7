//! Deterministic discrete-event simulation of a rack: clients, data nodes,
//! metadata nodes and backups, all connected through one switch.
//!
//! Every message takes two hops: sender to switch, switch to receiver.
//! Servers have a fixed pool of worker threads; a handler runs when its job
//! completes. Faults come from a dedicated seeded generator so the same
//! configuration and seed always replay the same run.

mod faults;

pub use faults::{CrashEvent, CrashTarget, FaultPlan, LinkClass, LinkLoss, NodeKind, TargetedDrop};

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientConfig, HistoryEvent, Mode, OpKind, OpRequest, Output, Session};
use crate::datanode::{BackupReplica, DataNode, DataNodeError, WriteOutcome, CTRL_REPLICATE_ACK};
use crate::metanode::{MetaConfig, MetaCounters, MetaNode, MetaValue};
use crate::mutant::Mutant;
use crate::trace::{NodeRecord, SwitchRecord};
use crate::vswitch::{Routes, VSwitch};
use crate::wire::{Body, FieldDelta, HashConfig, Message, NodeId, OpType, ReadOutcome, Timestamp, SWITCH_ID};

/// Per-hop latency and per-message processing costs, in nanoseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Latency {
    pub hop_ns: u64,
    pub switch_ns: u64,
    pub dn_write_ns: u64,
    pub dn_read_ns: u64,
    pub dn_misc_ns: u64,
    pub mn_op_ns: u64,
    pub mn_ack_ns: u64,
    /// Per-update cost of a deferred batch relative to `mn_op_ns`.
    pub batch_factor: f64,
}

impl Default for Latency {
    fn default() -> Self {
        Latency {
            hop_ns: 850,
            switch_ns: 200,
            dn_write_ns: 2_680,
            dn_read_ns: 1_000,
            dn_misc_ns: 200,
            mn_op_ns: 1_500,
            mn_ack_ns: 100,
            batch_factor: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub data_nodes: usize,
    pub meta_nodes: usize,
    /// Backups per data node; replies wait for one backup ack.
    pub backups: usize,
    pub workers: usize,
    /// Closed-loop sessions (clients x queue depth).
    pub sessions: usize,
    /// False runs the baseline ordered-write system.
    pub accelerate: bool,
    pub partial: bool,
    pub value_size: usize,
    pub client_timeout_ns: u64,
    pub max_retries: u32,
    /// Extra simulated time allowed after the last operation completes.
    pub drain_ns: u64,
    pub latency: Latency,
    pub meta: MetaConfig,
    pub hash: HashConfig,
    pub faults: FaultPlan,
    pub mutant: Option<Mutant>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            data_nodes: 5,
            meta_nodes: 5,
            backups: 0,
            workers: 4,
            sessions: 6,
            accelerate: true,
            partial: false,
            value_size: 120,
            client_timeout_ns: 500_000,
            max_retries: 64,
            drain_ns: 50_000_000,
            latency: Latency::default(),
            meta: MetaConfig::default(),
            hash: HashConfig::default(),
            faults: FaultPlan::default(),
            mutant: None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |s: &str| Err(ConfigError::Invalid(s.to_string()));
        if self.data_nodes == 0 || self.meta_nodes == 0 {
            return bad("need at least one data node and one metadata node");
        }
        if self.workers == 0 {
            return bad("workers must be positive");
        }
        if self.sessions == 0 {
            return bad("concurrency must be at least 1");
        }
        if self.meta.batch_size == 0 || self.meta.streams == 0 {
            return bad("batch size and stream count must be positive");
        }
        let nodes = 1 + self.data_nodes * (1 + self.backups) + self.meta_nodes + self.sessions;
        if nodes > usize::from(u16::MAX) {
            return bad("too many nodes for 16-bit ids");
        }
        if self.client_timeout_ns == 0 {
            return bad("client timeout must be positive");
        }
        self.faults.validate(self.meta_nodes).map_err(ConfigError::Invalid)
    }
}

/// Supplies the next operation for a closed-loop session.
pub trait Workload {
    fn next_op(&mut self, session: usize) -> OpRequest;
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStats {
    pub events: u64,
    /// Link traversals started.
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
    /// Arrived at a crashed switch or node.
    pub lost_down: u64,
    pub duplicated: u64,
    pub targeted_drops: u64,
    /// Messages still travelling when the run stopped.
    pub in_flight: u64,
    /// Data-node errors that indicate a protocol bug.
    pub protocol_errors: u64,
    pub aborted_ops: u64,
    pub end_ns: u64,
    /// When the last operation completed.
    pub ops_done_ns: u64,
}

impl SimStats {
    /// Every traversal is delivered, dropped or still in flight.
    pub fn conserved(&self) -> bool {
        self.sent + self.duplicated == self.delivered + self.lost + self.lost_down + self.targeted_drops + self.in_flight
    }
}

/// Final metadata of one key after the run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub key: String,
    pub ts: u32,
    /// Partial mode: per-field timestamps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_ts: Option<Vec<u32>>,
}

pub struct RunReport {
    pub history: Vec<HistoryEvent>,
    pub switch_trace: Vec<SwitchRecord>,
    pub node_trace: Vec<NodeRecord>,
    pub stats: SimStats,
    pub meta_counters: Vec<MetaCounters>,
    pub final_records: Vec<FinalRecord>,
    /// Switch entries still valid at the end.
    pub final_valid: usize,
    pub drained: bool,
    /// Per-metadata-node index dumps.
    pub index_dumps: Vec<String>,
}

#[derive(Clone, Debug)]
enum Job {
    Handle(Message),
    Flush(Vec<Message>),
}

#[derive(Clone, Debug)]
enum Event {
    AtSwitch(Message),
    AtNode(Message),
    JobDone { node: NodeId, epoch: u64, job: Job },
    Timeout { session: usize, generation: u64 },
    Poll { node: NodeId, epoch: u64 },
    Crash(usize),
    Restore(usize),
    Submit { session: usize, op: OpRequest },
    Kick(usize),
}

struct Scheduled {
    at: u64,
    seq: u64,
    ev: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, o: &Self) -> bool {
        self.at == o.at && self.seq == o.seq
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, o: &Self) -> Ordering {
        (o.at, o.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Clone, Debug)]
struct Server {
    free: usize,
    inbox: VecDeque<Message>,
    epoch: u64,
    down: bool,
    /// Batches being executed.
    flushing: usize,
    poll_at: u64,
}

/// Node id layout: switch, data nodes, metadata nodes, backups, sessions.
#[derive(Clone, Debug)]
pub struct Layout {
    pub data: Vec<NodeId>,
    pub meta: Vec<NodeId>,
    pub backups: Vec<NodeId>,
    pub sessions: Vec<NodeId>,
}

impl Layout {
    pub fn new(cfg: &SimConfig) -> Self {
        let mut next: NodeId = 1;
        let mut take = |n: usize| {
            let v: Vec<NodeId> = (next..next + n as NodeId).collect();
            next += n as NodeId;
            v
        };
        let data = take(cfg.data_nodes);
        let meta = take(cfg.meta_nodes);
        let backups = take(cfg.data_nodes * cfg.backups);
        let sessions = take(cfg.sessions);
        Layout { data, meta, backups, sessions }
    }

    pub fn kind(&self, id: NodeId) -> NodeKind {
        let within = |v: &[NodeId]| v.first().is_some_and(|&f| id >= f && id < f + v.len() as NodeId);
        if id == SWITCH_ID {
            NodeKind::Switch
        } else if within(&self.data) {
            NodeKind::Data
        } else if within(&self.meta) {
            NodeKind::Meta
        } else if within(&self.backups) {
            NodeKind::Backup
        } else {
            NodeKind::Client
        }
    }

    pub fn routes(&self) -> Routes {
        Routes::new(self.data.clone(), self.meta.clone())
    }
}

pub struct Sim {
    cfg: SimConfig,
    layout: Layout,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Scheduled>,
    rng: ChaCha8Rng,
    pub switch: VSwitch,
    switch_down: bool,
    pub data: Vec<DataNode>,
    pub meta: Vec<MetaNode>,
    backups: Vec<BackupReplica>,
    sessions: Vec<Session>,
    pending: Vec<VecDeque<OpRequest>>,
    servers: Vec<Server>,
    watermarks: Vec<Timestamp>,
    drop_counts: Vec<u64>,
    workload: Option<Box<dyn Workload>>,
    op_limit: u64,
    issued: u64,
    completed: u64,
    history: Vec<HistoryEvent>,
    stats: SimStats,
    /// Crash and restore events not yet processed.
    faults_pending: usize,
}

impl Sim {
    pub fn new(cfg: SimConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let routes = layout.routes();
        let switch = VSwitch::new(routes.clone(), cfg.accelerate).with_mutant(cfg.mutant);
        let data = layout
            .data
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                let backups = layout.backups[i * cfg.backups..(i + 1) * cfg.backups].to_vec();
                DataNode::new(id, routes.clone(), cfg.hash).with_backups(backups).with_mutant(cfg.mutant)
            })
            .collect();
        let meta = layout.meta.iter().map(|&id| MetaNode::new(id, routes.clone(), cfg.meta.clone())).collect();
        let backups = layout.backups.iter().map(|&id| BackupReplica::new(id)).collect();
        let client_cfg = ClientConfig {
            mode: if cfg.accelerate { Mode::Accelerated } else { Mode::Baseline },
            partial: cfg.partial,
            timeout_ns: cfg.client_timeout_ns,
            max_retries: cfg.max_retries,
        };
        let sessions = layout
            .sessions
            .iter()
            .map(|&id| Session::new(id, routes.clone(), cfg.hash, client_cfg.clone()))
            .collect();
        let n_nodes = 1 + layout.data.len() + layout.meta.len() + layout.backups.len() + layout.sessions.len();
        let server = Server { free: cfg.workers, inbox: VecDeque::new(), epoch: 0, down: false, flushing: 0, poll_at: u64::MAX };
        let mut sim = Sim {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xfa17_5eed_0000_0001),
            pending: vec![VecDeque::new(); cfg.sessions],
            servers: vec![server; n_nodes],
            watermarks: vec![Timestamp::NONE; cfg.data_nodes],
            drop_counts: vec![0; cfg.faults.drops.len()],
            cfg,
            layout,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            switch,
            switch_down: false,
            data,
            meta,
            backups,
            sessions,
            workload: None,
            op_limit: 0,
            issued: 0,
            completed: 0,
            history: Vec::new(),
            stats: SimStats::default(),
            faults_pending: 0,
        };
        for i in 0..sim.cfg.faults.crashes.len() {
            let at = sim.cfg.faults.crashes[i].at_ns;
            sim.faults_pending += 1;
            sim.schedule(at, Event::Crash(i));
        }
        for i in 0..sim.meta.len() {
            let id = sim.layout.meta[i];
            sim.reschedule_poll(id);
        }
        Ok(sim)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn history(&self) -> &[HistoryEvent] {
        &self.history
    }

    pub fn stats(&self) -> &SimStats {
        &self.stats
    }

    /// Closed-loop load: every session issues operations back to back until
    /// `op_count` operations have been started.
    pub fn set_workload(&mut self, workload: Box<dyn Workload>, op_count: u64) {
        self.workload = Some(workload);
        self.op_limit = op_count;
        for s in 0..self.sessions.len() {
            self.schedule(0, Event::Kick(s));
        }
    }

    /// Scripted operation for `session` at time `at`; queued behind any
    /// operation the session already runs.
    pub fn submit(&mut self, at: u64, session: usize, op: OpRequest) {
        self.op_limit += 1;
        self.schedule(at, Event::Submit { session, op });
    }

    fn schedule(&mut self, at: u64, ev: Event) {
        self.seq += 1;
        self.queue.push(Scheduled { at, seq: self.seq, ev });
    }

    fn jitter(&mut self) -> u64 {
        match self.cfg.faults.jitter_ns {
            0 => 0,
            j => self.rng.random_range(0..=j),
        }
    }

    /// Starts one link traversal, applying loss, jitter and duplication.
    fn transmit(&mut self, link: LinkClass, base_delay: u64, msg: Message, to_switch: bool) {
        self.stats.sent += 1;
        let loss = self.cfg.faults.loss_for(link);
        if loss > 0.0 && self.rng.random_bool(loss) {
            self.stats.lost += 1;
            return;
        }
        let copies = if self.cfg.faults.dup > 0.0 && self.rng.random_bool(self.cfg.faults.dup) {
            self.stats.duplicated += 1;
            2
        } else {
            1
        };
        for _ in 0..copies {
            let delay = base_delay + self.jitter();
            let ev = if to_switch { Event::AtSwitch(msg.clone()) } else { Event::AtNode(msg.clone()) };
            self.stats.in_flight += 1;
            self.schedule(self.now + delay, ev);
        }
    }

    fn send(&mut self, msg: Message) {
        let from = self.layout.kind(msg.header.src);
        let link = LinkClass { from, to: NodeKind::Switch };
        let hop = self.cfg.latency.hop_ns;
        self.transmit(link, hop, msg, true);
    }

    fn send_all(&mut self, msgs: Vec<Message>) {
        for m in msgs {
            self.send(m);
        }
    }

    fn targeted_drop(&mut self, msg: &Message) -> bool {
        for i in 0..self.cfg.faults.drops.len() {
            let d = self.cfg.faults.drops[i];
            if d.op != msg.op() {
                continue;
            }
            if d.mirrored_only && !MetaNode::is_async(msg) {
                continue;
            }
            self.drop_counts[i] += 1;
            if self.drop_counts[i] == d.nth {
                return true;
            }
        }
        false
    }

    fn at_switch(&mut self, msg: Message) {
        if self.switch_down {
            self.stats.lost_down += 1;
            return;
        }
        self.stats.delivered += 1;
        let out = self.switch.process(self.now, msg);
        for m in out {
            if self.targeted_drop(&m) {
                self.stats.targeted_drops += 1;
                self.stats.sent += 1;
                continue;
            }
            let to = self.layout.kind(m.header.dst);
            let link = LinkClass { from: NodeKind::Switch, to };
            let delay = self.cfg.latency.switch_ns + self.cfg.latency.hop_ns;
            self.transmit(link, delay, m, false);
        }
    }

    fn session_index(&self, id: NodeId) -> usize {
        (id - self.layout.sessions[0]) as usize
    }

    fn meta_index(&self, id: NodeId) -> usize {
        (id - self.layout.meta[0]) as usize
    }

    fn data_index(&self, id: NodeId) -> usize {
        (id - self.layout.data[0]) as usize
    }

    fn at_node(&mut self, msg: Message) {
        let dst = msg.header.dst;
        match self.layout.kind(dst) {
            NodeKind::Client => {
                self.stats.delivered += 1;
                let s = self.session_index(dst);
                let out = self.sessions[s].on_message(self.now, &msg);
                self.client_output(s, out);
            }
            NodeKind::Backup => {
                self.stats.delivered += 1;
                let b = (dst - self.layout.backups[0]) as usize;
                if let Some(ack) = self.backups[b].handle(&msg) {
                    self.send(ack);
                }
            }
            NodeKind::Data => {
                self.stats.delivered += 1;
                if matches!(msg.body, Body::Control { code: CTRL_REPLICATE_ACK, .. }) {
                    let d = self.data_index(dst);
                    if let Some(resp) = self.data[d].on_backup_ack(&msg) {
                        self.send(resp);
                    }
                    return;
                }
                self.servers[dst as usize].inbox.push_back(msg);
                self.try_schedule(dst);
            }
            NodeKind::Meta => {
                if self.servers[dst as usize].down {
                    self.stats.lost_down += 1;
                    return;
                }
                self.stats.delivered += 1;
                let m = self.meta_index(dst);
                if MetaNode::is_async(&msg) && self.meta[m].defers() {
                    self.meta[m].enqueue_async(self.now, msg);
                } else {
                    self.servers[dst as usize].inbox.push_back(msg);
                }
                self.try_schedule(dst);
            }
            NodeKind::Switch => unreachable!("switch traffic is handled at the switch"),
        }
    }

    fn job_cost(&self, kind: NodeKind, msg: &Message) -> u64 {
        let l = &self.cfg.latency;
        match (kind, msg.op()) {
            (NodeKind::Data, OpType::DataWriteReq) => l.dn_write_ns,
            (NodeKind::Data, OpType::DataReadReq) => l.dn_read_ns,
            (NodeKind::Data, _) => l.dn_misc_ns,
            (_, OpType::MetaUpdateReq | OpType::MetaReadReq) => l.mn_op_ns,
            _ => l.mn_ack_ns,
        }
    }

    fn try_schedule(&mut self, node: NodeId) {
        let kind = self.layout.kind(node);
        loop {
            let srv = &self.servers[node as usize];
            if srv.free == 0 || srv.down {
                return;
            }
            let epoch = srv.epoch;
            if kind == NodeKind::Meta {
                let m = self.meta_index(node);
                if self.meta[m].should_flush(srv.inbox.is_empty()) {
                    let n = self.meta[m].next_batch_len();
                    let batch = self.meta[m].take_batch(n);
                    let cost = (n as f64 * self.cfg.latency.mn_op_ns as f64 * self.cfg.latency.batch_factor).round() as u64;
                    let srv = &mut self.servers[node as usize];
                    srv.free -= 1;
                    srv.flushing += 1;
                    self.schedule(self.now + cost, Event::JobDone { node, epoch, job: Job::Flush(batch) });
                    continue;
                }
            }
            let Some(msg) = self.servers[node as usize].inbox.pop_front() else {
                return;
            };
            let cost = self.job_cost(kind, &msg);
            self.servers[node as usize].free -= 1;
            self.schedule(self.now + cost, Event::JobDone { node, epoch, job: Job::Handle(msg) });
        }
    }

    fn job_done(&mut self, node: NodeId, epoch: u64, job: Job) {
        if self.servers[node as usize].epoch != epoch {
            return;
        }
        self.servers[node as usize].free += 1;
        match self.layout.kind(node) {
            NodeKind::Data => {
                let Job::Handle(msg) = job else { unreachable!("data nodes do not batch") };
                let out = self.data_job(node, &msg);
                self.send_all(out);
            }
            NodeKind::Meta => {
                let m = self.meta_index(node);
                let out = match job {
                    Job::Flush(batch) => {
                        self.servers[node as usize].flushing -= 1;
                        self.meta[m].apply_batch(self.now, batch)
                    }
                    Job::Handle(msg) => self.meta[m].handle(self.now, &msg),
                };
                self.send_all(out);
                self.reschedule_poll(node);
            }
            _ => {}
        }
        self.try_schedule(node);
    }

    fn data_job(&mut self, node: NodeId, msg: &Message) -> Vec<Message> {
        let d = self.data_index(node);
        let now = self.now;
        let dn = &mut self.data[d];
        match &msg.body {
            Body::DataWriteReq { .. } => match dn.handle_data_write(now, msg) {
                Ok(WriteOutcome::Reply(m)) => vec![m],
                Ok(WriteOutcome::Replicate(copies)) => copies,
                Ok(WriteOutcome::InProgress) => Vec::new(),
                Err(_) => {
                    self.stats.protocol_errors += 1;
                    Vec::new()
                }
            },
            Body::DataReadReq { .. } => match dn.handle_data_read(msg) {
                Ok(m) => vec![m],
                Err(DataNodeError::InvalidLogId(_)) | Err(_) => {
                    self.stats.protocol_errors += 1;
                    let h = &msg.header;
                    vec![Message::new(node, h.src, h.hash, Timestamp::NONE, h.req_id, Body::DataReadResp(ReadOutcome::InvalidLogId))]
                }
            },
            Body::RecoverReq => vec![dn.recover_by_ts(msg)],
            _ => Vec::new(),
        }
    }

    fn reschedule_poll(&mut self, node: NodeId) {
        let m = self.meta_index(node);
        let d = self.meta[m].next_deadline().max(self.now);
        let srv = &mut self.servers[node as usize];
        if srv.down || d >= srv.poll_at {
            return;
        }
        srv.poll_at = d;
        let epoch = srv.epoch;
        self.schedule(d, Event::Poll { node, epoch });
    }

    fn poll(&mut self, node: NodeId, epoch: u64) {
        let srv = &mut self.servers[node as usize];
        if srv.epoch != epoch || srv.down || srv.poll_at != self.now {
            return;
        }
        srv.poll_at = u64::MAX;
        let m = self.meta_index(node);
        let out = self.meta[m].poll(self.now, &self.switch);
        self.send_all(out);
        self.reschedule_poll(node);
        self.try_schedule(node);
    }

    fn client_output(&mut self, s: usize, out: Output) {
        self.send_all(out.send);
        if let Some(generation) = out.arm {
            let at = self.now + self.cfg.client_timeout_ns;
            self.schedule(at, Event::Timeout { session: s, generation });
        }
        if let Some(ev) = out.done {
            self.completed += 1;
            if ev.outcome == crate::client::Outcome::Aborted {
                self.stats.aborted_ops += 1;
            }
            self.history.push(ev);
            self.stats.ops_done_ns = self.now;
            self.next_for(s);
        }
    }

    fn next_for(&mut self, s: usize) {
        if self.sessions[s].busy() {
            return;
        }
        let op = match self.pending[s].pop_front() {
            Some(op) => op,
            None => {
                if self.issued >= self.op_limit {
                    return;
                }
                match self.workload.as_mut() {
                    Some(w) => w.next_op(s),
                    None => return,
                }
            }
        };
        self.start_op(s, op);
    }

    fn start_op(&mut self, s: usize, mut op: OpRequest) {
        self.issued += 1;
        let op_id = self.issued;
        if op.kind != OpKind::Read {
            op.value_id = op_id;
            op.value_size = self.cfg.value_size;
            if let Some(d) = &op.delta {
                let pairs: Vec<(usize, u32)> = d.iter().map(|(f, _)| (f, op_id as u32)).collect();
                op.delta = Some(FieldDelta::from_pairs(&pairs));
            }
        }
        match self.sessions[s].start(self.now, op_id, op) {
            Ok(out) => self.client_output(s, out),
            Err(_) => {
                self.completed += 1;
                self.next_for(s);
            }
        }
    }

    fn submit_event(&mut self, s: usize, op: OpRequest) {
        self.pending[s].push_back(op);
        self.next_for(s);
    }

    fn crash(&mut self, i: usize) {
        self.faults_pending -= 1;
        let c = self.cfg.faults.crashes[i];
        match c.target {
            CrashTarget::Switch => {
                self.switch_down = true;
                self.switch.crash_reset();
            }
            CrashTarget::Meta { index } => {
                let id = self.layout.meta[index];
                let srv = &mut self.servers[id as usize];
                srv.down = true;
                srv.epoch += 1;
                srv.inbox.clear();
                srv.free = self.cfg.workers;
                srv.flushing = 0;
                srv.poll_at = u64::MAX;
                self.meta[index].crash(self.now);
            }
        }
        self.faults_pending += 1;
        self.schedule(self.now + c.downtime_ns, Event::Restore(i));
    }

    fn reseed_switch(&mut self) {
        for d in 0..self.data.len() {
            let hw = self.data[d].high_water();
            self.switch.control_reseed(self.layout.data[d], hw);
        }
    }

    fn restore(&mut self, i: usize) {
        self.faults_pending -= 1;
        let c = self.cfg.faults.crashes[i];
        match c.target {
            CrashTarget::Switch => {
                let streams: Vec<_> =
                    self.data.iter().zip(&self.watermarks).map(|(dn, w)| dn.replay_metadata(Some(*w))).collect();
                for mn in self.meta.iter_mut() {
                    mn.drain_for_switch_recovery(self.now);
                    mn.rebuild(self.now, &streams);
                }
                self.reseed_switch();
                for d in 0..self.data.len() {
                    self.watermarks[d] = self.data[d].high_water();
                }
                self.switch_down = false;
            }
            CrashTarget::Meta { index } => {
                let streams: Vec<_> = self.data.iter().map(|dn| dn.replay_metadata(None)).collect();
                self.meta[index].rebuild(self.now, &streams);
                let owned: Vec<u16> = self.meta[index].owned_indices(&self.switch).collect();
                for ix in owned {
                    let ts = self.switch.control_read_entry(ix).cur_ts;
                    self.switch.control_clear(ix, ts);
                }
                self.reseed_switch();
                let id = self.layout.meta[index];
                self.servers[id as usize].down = false;
            }
        }
        for k in 0..self.meta.len() {
            let id = self.layout.meta[k];
            self.reschedule_poll(id);
            self.try_schedule(id);
        }
    }

    fn all_done(&self) -> bool {
        self.issued >= self.op_limit && self.sessions.iter().all(|s| !s.busy()) && self.pending.iter().all(|p| p.is_empty())
    }

    fn quiescent(&self) -> bool {
        self.stats.in_flight == 0
            && self.meta.iter().all(|m| m.quiescent())
            && self.switch.valid_count() == 0
            && self.servers.iter().all(|s| s.inbox.is_empty() && s.flushing == 0)
    }

    fn step(&mut self, ev: Event) {
        self.stats.events += 1;
        match ev {
            Event::AtSwitch(m) => {
                self.stats.in_flight -= 1;
                self.at_switch(m);
            }
            Event::AtNode(m) => {
                self.stats.in_flight -= 1;
                self.at_node(m);
            }
            Event::JobDone { node, epoch, job } => self.job_done(node, epoch, job),
            Event::Timeout { session, generation } => {
                let out = self.sessions[session].on_timeout(self.now, generation);
                self.client_output(session, out);
            }
            Event::Poll { node, epoch } => self.poll(node, epoch),
            Event::Crash(i) => self.crash(i),
            Event::Restore(i) => self.restore(i),
            Event::Submit { session, op } => self.submit_event(session, op),
            Event::Kick(session) => self.next_for(session),
        }
    }

    /// Processes events up to and including time `t`.
    pub fn run_until(&mut self, t: u64) {
        while let Some(top) = self.queue.peek() {
            if top.at > t {
                break;
            }
            let Scheduled { at, ev, .. } = self.queue.pop().expect("peeked");
            self.now = at;
            self.step(ev);
        }
        self.now = self.now.max(t);
    }

    /// Runs until every operation finished and the system drained, or the
    /// drain allowance ran out.
    pub fn run(&mut self) {
        let mut deadline: Option<u64> = None;
        while let Some(Scheduled { at, ev, .. }) = self.queue.pop() {
            if deadline.is_some_and(|d| at > d) {
                break;
            }
            self.now = at;
            self.step(ev);
            if self.all_done() {
                deadline.get_or_insert(self.now + self.cfg.drain_ns);
                if self.faults_pending == 0 && self.quiescent() {
                    break;
                }
            }
        }
    }

    /// Consumes the simulator and collects its outputs.
    pub fn finish(mut self) -> RunReport {
        self.stats.end_ns = self.now;
        let drained = self.quiescent();
        let mut node_trace = Vec::new();
        for d in self.data.iter_mut() {
            node_trace.extend(d.take_trace());
        }
        for m in self.meta.iter_mut() {
            node_trace.extend(m.take_trace());
        }
        node_trace.sort_by_key(|r| r.sim_time);
        let mut final_records = Vec::new();
        let mut index_dumps = Vec::new();
        for m in &self.meta {
            index_dumps.push(m.index().dump());
            for (k, r) in m.index().iter() {
                let field_ts = match &r.value {
                    MetaValue::Fields { ts, .. } => Some(ts.to_vec()),
                    MetaValue::Location(_) => None,
                };
                final_records.push(FinalRecord { key: hex::encode(k), ts: r.ts.0, field_ts });
            }
        }
        final_records.sort_by(|a, b| a.key.cmp(&b.key));
        let mut history = std::mem::take(&mut self.history);
        history.sort_by_key(|e| e.op_id);
        RunReport {
            history,
            switch_trace: self.switch.take_trace(),
            node_trace,
            meta_counters: self.meta.iter().map(|m| m.counters().clone()).collect(),
            final_valid: self.switch.valid_count(),
            drained,
            index_dumps,
            final_records,
            stats: self.stats,
        }
    }
}

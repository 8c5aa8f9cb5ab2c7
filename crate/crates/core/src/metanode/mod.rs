//! Metadata node: ordered index, deferred buffer for mirrored updates,
//! clear/reclaim with retry, gated-response resends and crash rebuild.

mod index;
mod pipeline;

pub use index::{LeafRef, MetaRecord, MetaValue, PagedIndex, PAGE_CAPACITY};
pub use pipeline::{apply_sequential, Access, Applied, Pipeline, Update};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datanode::ReplayRecord;
use crate::trace::{ApplySource, NodeEvent, NodeRecord};
use crate::vswitch::{Routes, VSwitch};
use crate::wire::{Body, Flags, KeyHash, Message, MetaView, MetadataPayload, NodeId, Timestamp, SWITCH_ID};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    /// Deferred metadata processing on/off.
    pub dmp: bool,
    pub batch_size: usize,
    pub streams: usize,
    pub clear_timeout_ns: u64,
    /// Delay before resending a gate-blocked response.
    pub gate_retry_ns: u64,
    /// Blocked resends before the blocking entry is recovered.
    pub recover_after: u32,
    pub sweep_interval_ns: u64,
    /// How long the key behind a switch entry is remembered.
    pub owner_ttl_ns: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            dmp: true,
            batch_size: 16,
            streams: 8,
            clear_timeout_ns: 500_000,
            gate_retry_ns: 5_000,
            recover_after: 8,
            sweep_interval_ns: 1_000_000,
            owner_ttl_ns: 5_000_000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MetaCounters {
    pub async_applied: u64,
    pub sync_applied: u64,
    pub batches: u64,
    pub resends: u64,
    pub gate_resends: u64,
    pub recoveries: u64,
    pub retired_clears: u64,
    pub replayed: u64,
    /// Attached deltas dropped because they belong to another key.
    pub foreign_attach: u64,
    /// Partial reads held until the owner of their attached delta is known.
    pub parked_reads: u64,
}

#[derive(Clone, Debug)]
struct Gated {
    msg: Message,
    bounces: u32,
    due: u64,
}

#[derive(Clone, Copy, Debug)]
struct Pending {
    hash: KeyHash,
    due: u64,
}

pub struct MetaNode {
    id: NodeId,
    cfg: MetaConfig,
    routes: Routes,
    index: PagedIndex,
    buffer: Vec<Message>,
    force_flush: bool,
    clears: BTreeMap<(u16, u32), Pending>,
    gated: BTreeMap<u64, Gated>,
    /// Blocked deliveries per request, kept across resends.
    bounce_counts: BTreeMap<u64, u32>,
    recovering: BTreeMap<(u16, u32), Pending>,
    /// Key and arrival time of each accelerated update, by (index, ts).
    /// Fingerprints collide, so an attached delta is only merged when its
    /// owner matches the key being read.
    owners: BTreeMap<(u16, u32), (Vec<u8>, u64)>,
    parked: Vec<Gated>,
    /// Entries seen valid at the previous sweep.
    seen: BTreeMap<u16, u32>,
    next_sweep: u64,
    counters: MetaCounters,
    trace: Vec<NodeRecord>,
}

impl MetaNode {
    pub fn new(id: NodeId, routes: Routes, cfg: MetaConfig) -> Self {
        let next_sweep = cfg.sweep_interval_ns;
        MetaNode {
            id,
            cfg,
            routes,
            index: PagedIndex::new(),
            buffer: Vec::new(),
            force_flush: false,
            clears: BTreeMap::new(),
            gated: BTreeMap::new(),
            bounce_counts: BTreeMap::new(),
            recovering: BTreeMap::new(),
            owners: BTreeMap::new(),
            parked: Vec::new(),
            seen: BTreeMap::new(),
            next_sweep,
            counters: MetaCounters::default(),
            trace: Vec::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn index(&self) -> &PagedIndex {
        &self.index
    }

    pub fn counters(&self) -> &MetaCounters {
        &self.counters
    }

    pub fn take_trace(&mut self) -> Vec<NodeRecord> {
        std::mem::take(&mut self.trace)
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn outstanding_clears(&self) -> usize {
        self.clears.len()
    }

    /// True when nothing is buffered, awaiting a clear ack, blocked or
    /// being recovered.
    pub fn quiescent(&self) -> bool {
        self.buffer.is_empty() && self.clears.is_empty() && self.gated.is_empty() && self.recovering.is_empty() && self.parked.is_empty()
    }

    /// Mirrored updates are off the critical path.
    pub fn is_async(msg: &Message) -> bool {
        matches!(msg.body, Body::MetaUpdateReq { .. }) && msg.header.flags.contains(Flags::ACCELERATED)
    }

    /// Whether mirrored updates go to the deferred buffer.
    pub fn defers(&self) -> bool {
        self.cfg.dmp
    }

    pub fn enqueue_async(&mut self, now: u64, msg: Message) {
        if let Body::MetaUpdateReq { key, .. } = &msg.body {
            self.note_owner(now, msg.header.hash.index, msg.header.ts, key);
        }
        self.buffer.push(msg);
    }

    fn note_owner(&mut self, now: u64, index: u16, ts: Timestamp, key: &[u8]) {
        self.owners.insert((index, ts.0), (key.to_vec(), now));
    }

    /// Whether a batch should start now. `idle` means no critical work is
    /// waiting in the node's inbox.
    pub fn should_flush(&self, idle: bool) -> bool {
        !self.buffer.is_empty() && (self.force_flush || idle || self.buffer.len() >= self.cfg.batch_size)
    }

    /// Size of the next batch.
    pub fn next_batch_len(&self) -> usize {
        self.buffer.len().min(self.cfg.batch_size)
    }

    fn log(&mut self, now: u64, event: NodeEvent) {
        self.trace.push(NodeRecord { sim_time: now, node: self.id, event });
    }

    fn apply(&mut self, now: u64, key: &[u8], meta: &MetadataPayload, ts: Timestamp, source: ApplySource) {
        let (prev, res) = self.index.apply(key, meta, ts);
        self.log_apply(now, key, ts, prev, res, source);
    }

    fn log_apply(&mut self, now: u64, key: &[u8], ts: Timestamp, prev: Timestamp, res: Timestamp, source: ApplySource) {
        match source {
            ApplySource::Async => self.counters.async_applied += 1,
            ApplySource::Sync => self.counters.sync_applied += 1,
            ApplySource::Recover => self.counters.recoveries += 1,
            ApplySource::Replay => self.counters.replayed += 1,
        }
        self.log(now, NodeEvent::Apply { key: hex::encode(key), ts: ts.0, prev_ts: prev.0, result_ts: res.0, source });
    }

    fn send_clear(&mut self, now: u64, hash: KeyHash, ts: Timestamp) -> Message {
        self.clears.insert((hash.index, ts.0), Pending { hash, due: now + self.cfg.clear_timeout_ns });
        self.log(now, NodeEvent::ClearSent { index: hash.index, ts: ts.0 });
        Message::new(self.id, SWITCH_ID, hash, ts, 0, Body::ClearReq)
    }

    /// Applies up to one batch of deferred updates and returns their clears.
    pub fn flush(&mut self, now: u64) -> Vec<Message> {
        let n = self.next_batch_len();
        self.flush_upto(now, n)
    }

    /// Like [`MetaNode::flush`] with at most `n` updates.
    pub fn flush_upto(&mut self, now: u64, n: usize) -> Vec<Message> {
        let batch = self.take_batch(n);
        self.apply_batch(now, batch)
    }

    /// Removes up to `n` buffered updates for a worker to execute.
    pub fn take_batch(&mut self, n: usize) -> Vec<Message> {
        let n = n.min(self.buffer.len());
        self.force_flush = false;
        self.buffer.drain(..n).collect()
    }

    /// Executes a batch taken with [`MetaNode::take_batch`]: sorted,
    /// pipelined apply, then one clear per update.
    pub fn apply_batch(&mut self, now: u64, batch: Vec<Message>) -> Vec<Message> {
        if batch.is_empty() {
            return Vec::new();
        }
        self.counters.batches += 1;
        let updates: Vec<Update> = batch
            .iter()
            .filter_map(|m| match &m.body {
                Body::MetaUpdateReq { key, meta } => Some(Update { key: key.clone(), meta: meta.clone(), ts: m.header.ts }),
                _ => None,
            })
            .collect();
        let mut pipe = Pipeline::new(self.cfg.streams);
        let applied = pipe.run(&mut self.index, &updates);
        let keys = applied.iter().map(|a| hex::encode(&updates[a.slot].key)).collect();
        self.log(now, NodeEvent::Batch { keys });
        let mut out = Vec::with_capacity(applied.len());
        for a in &applied {
            let u = &updates[a.slot];
            self.log_apply(now, &u.key, u.ts, a.prev_ts, a.result_ts, ApplySource::Async);
        }
        for m in &batch {
            out.push(self.send_clear(now, m.header.hash, m.header.ts));
        }
        out
    }

    /// Handles one message that needs processing now.
    pub fn handle(&mut self, now: u64, msg: &Message) -> Vec<Message> {
        let h = &msg.header;
        match &msg.body {
            Body::MetaUpdateReq { key, meta } if Self::is_async(msg) => {
                self.note_owner(now, h.hash.index, h.ts, key);
                self.apply(now, key, meta, h.ts, ApplySource::Async);
                vec![self.send_clear(now, h.hash, h.ts)]
            }
            Body::MetaUpdateReq { key, meta } => {
                self.apply(now, key, meta, h.ts, ApplySource::Sync);
                let mut resp = Message::new(self.id, h.src, h.hash, h.ts, h.req_id, Body::MetaUpdateResp);
                resp.header.flags = h.flags & Flags::PARTIAL;
                vec![resp]
            }
            Body::MetaUpdateResp if h.flags.contains(Flags::BLOCKED_RETRY) => {
                let mut m = msg.clone();
                m.header.flags.remove(Flags::BLOCKED_RETRY);
                m.header.src = self.id;
                m.header.dst = h.src;
                let bounces = self.bounce_counts.get(&h.req_id).copied().unwrap_or(0) + 1;
                self.bounce_counts.insert(h.req_id, bounces);
                self.gated.insert(h.req_id, Gated { msg: m, bounces, due: now + self.cfg.gate_retry_ns });
                Vec::new()
            }
            Body::MetaReadReq { key, attached } => {
                let mut attached = attached.as_ref();
                if attached.is_some() {
                    match self.owners.get(&(h.hash.index, h.ts.0)) {
                        Some((owner, _)) if owner == key => {}
                        Some(_) => {
                            self.counters.foreign_attach += 1;
                            attached = None;
                        }
                        None => {
                            self.counters.parked_reads += 1;
                            self.parked.push(Gated { msg: msg.clone(), bounces: 0, due: now + self.cfg.gate_retry_ns });
                            return Vec::new();
                        }
                    }
                }
                let rec = self.index.get(key);
                let view = match attached {
                    Some(delta) => {
                        let fields = match rec {
                            Some(r) => r.merged_fields(Some((delta, h.ts))),
                            None => MetaRecord::new(delta, h.ts).merged_fields(None),
                        };
                        fields.map_or(MetaView::NotFound, MetaView::Fields)
                    }
                    None => match rec.map(|r| &r.value) {
                        None => MetaView::NotFound,
                        Some(MetaValue::Location(l)) => MetaView::Location(*l),
                        Some(MetaValue::Fields { values, .. }) => MetaView::Fields(values.to_vec()),
                    },
                };
                let ts = rec.map_or(Timestamp::NONE, |r| r.ts).max(if attached.is_some() { h.ts } else { Timestamp::NONE });
                let mut resp = Message::new(self.id, h.src, h.hash, ts, h.req_id, Body::MetaReadResp(view));
                resp.header.flags = h.flags & Flags::PARTIAL;
                vec![resp]
            }
            Body::ClearAck => {
                if self.clears.remove(&(h.hash.index, h.ts.0)).is_some() {
                    self.log(now, NodeEvent::ClearAcked { index: h.hash.index, ts: h.ts.0 });
                }
                Vec::new()
            }
            Body::RecoverResp(found) => {
                let key_slot = (h.hash.index, h.ts.0);
                if self.recovering.remove(&key_slot).is_none() {
                    return Vec::new();
                }
                match found {
                    Some(r) => {
                        self.note_owner(now, h.hash.index, h.ts, &r.key);
                        self.apply(now, &r.key, &r.meta, h.ts, ApplySource::Recover);
                        vec![self.send_clear(now, h.hash, h.ts)]
                    }
                    None => Vec::new(),
                }
            }
            _ => Vec::new(),
        }
    }

    /// Earliest time [`MetaNode::poll`] has work.
    pub fn next_deadline(&self) -> u64 {
        let clears = self.clears.values().map(|p| p.due).min();
        let gated = self.gated.values().map(|g| g.due).min();
        let rec = self.recovering.values().map(|p| p.due).min();
        let parked = self.parked.iter().map(|g| g.due).min();
        [clears, gated, rec, parked, Some(self.next_sweep)].into_iter().flatten().min().unwrap_or(u64::MAX)
    }

    fn recover(&mut self, now: u64, hash: KeyHash, ts: Timestamp) -> Option<Message> {
        let slot = (hash.index, ts.0);
        if self.clears.contains_key(&slot) || self.recovering.contains_key(&slot) {
            return None;
        }
        if self.buffer.iter().any(|m| m.header.hash.index == hash.index && m.header.ts == ts) {
            self.force_flush = true;
            return None;
        }
        self.recovering.insert(slot, Pending { hash, due: now + self.cfg.clear_timeout_ns });
        Some(Message::new(self.id, self.routes.data_node(hash.index), hash, ts, 0, Body::RecoverReq))
    }

    /// Timer work: clear resends, blocked-response resends, stale-entry
    /// recovery. Reads switch state through the control plane.
    pub fn poll(&mut self, now: u64, sw: &VSwitch) -> Vec<Message> {
        let mut out = Vec::new();

        let due: Vec<(u16, u32)> = self.clears.iter().filter(|(_, p)| p.due <= now).map(|(k, _)| *k).collect();
        for slot in due {
            let e = sw.control_read_entry(slot.0);
            if !e.valid || e.cur_ts.0 != slot.1 {
                self.clears.remove(&slot);
                self.counters.retired_clears += 1;
                self.log(now, NodeEvent::ClearRetired { index: slot.0, ts: slot.1 });
                continue;
            }
            let p = self.clears.get_mut(&slot).expect("present");
            p.due = now + self.cfg.clear_timeout_ns;
            let hash = p.hash;
            self.counters.resends += 1;
            out.push(Message::new(self.id, SWITCH_ID, hash, Timestamp(slot.1), 0, Body::ClearReq));
        }

        let due: Vec<(u16, u32)> = self.recovering.iter().filter(|(_, p)| p.due <= now).map(|(k, _)| *k).collect();
        for slot in due {
            let p = self.recovering.remove(&slot).expect("present");
            let e = sw.control_read_entry(slot.0);
            if e.valid && e.cur_ts.0 == slot.1 {
                out.extend(self.recover(now, p.hash, Timestamp(slot.1)));
            }
        }

        let due: Vec<u64> = self.gated.iter().filter(|(_, g)| g.due <= now).map(|(k, _)| *k).collect();
        for req_id in due {
            let mut g = self.gated.remove(&req_id).expect("present");
            let index = g.msg.header.hash.index;
            let e = sw.control_read_entry(index);
            if g.bounces >= self.cfg.recover_after && e.valid {
                g.bounces = 0;
                let hash = KeyHash { index, fingerprint: e.fingerprint };
                out.extend(self.recover(now, hash, e.cur_ts));
            }
            self.bounce_counts.insert(req_id, g.bounces);
            self.counters.gate_resends += 1;
            out.push(g.msg);
        }

        let (due, rest): (Vec<Gated>, Vec<Gated>) = std::mem::take(&mut self.parked).into_iter().partition(|g| g.due <= now);
        self.parked = rest;
        for mut g in due {
            let h = g.msg.header;
            let e = sw.control_read_entry(h.hash.index);
            if self.owners.contains_key(&(h.hash.index, h.ts.0)) {
                out.extend(self.handle(now, &g.msg));
            } else if !e.valid || e.cur_ts != h.ts {
                // Cleared or reset: a cleared entry was applied first, so
                // the index already holds whatever the delta carried.
                if let Body::MetaReadReq { attached, .. } = &mut g.msg.body {
                    *attached = None;
                }
                out.extend(self.handle(now, &g.msg));
            } else {
                g.bounces += 1;
                if g.bounces >= self.cfg.recover_after {
                    g.bounces = 0;
                    out.extend(self.recover(now, h.hash, h.ts));
                }
                g.due = now + self.cfg.gate_retry_ns;
                self.parked.push(g);
            }
        }

        if now >= self.next_sweep {
            let horizon = now.saturating_sub(self.cfg.owner_ttl_ns);
            let clears = &self.clears;
            self.owners.retain(|slot, (_, at)| *at >= horizon || clears.contains_key(slot));
            self.next_sweep = now + self.cfg.sweep_interval_ns;
            let mut seen = BTreeMap::new();
            let candidates: Vec<(u16, u32, u32)> = sw
                .control_valid_indices()
                .filter(|&i| self.routes.meta_node(i) == self.id)
                .map(|i| {
                    let e = sw.control_read_entry(i);
                    (i, e.cur_ts.0, e.fingerprint)
                })
                .collect();
            for (index, ts, fingerprint) in candidates {
                if self.seen.get(&index) == Some(&ts) {
                    out.extend(self.recover(now, KeyHash { index, fingerprint }, Timestamp(ts)));
                }
                seen.insert(index, ts);
            }
            self.seen = seen;
        }
        out
    }

    /// Loses all volatile state.
    pub fn crash(&mut self, now: u64) {
        let id = self.id;
        let routes = self.routes.clone();
        let cfg = self.cfg.clone();
        let counters = std::mem::take(&mut self.counters);
        let trace = std::mem::take(&mut self.trace);
        *self = MetaNode::new(id, routes, cfg);
        self.counters = counters;
        self.trace = trace;
        self.next_sweep = now + self.cfg.sweep_interval_ns;
        self.log(now, NodeEvent::Crash);
    }

    /// Newest-wins merge of data-node replay streams.
    pub fn rebuild(&mut self, now: u64, streams: &[Vec<ReplayRecord>]) {
        let mut n = 0u64;
        for r in streams.iter().flatten() {
            if self.routes.meta_node(r.index) != self.id {
                continue;
            }
            self.note_owner(now, r.index, r.ts, &r.key);
            self.apply(now, &r.key, &r.meta, r.ts, ApplySource::Replay);
            n += 1;
        }
        self.log(now, NodeEvent::Rebuild { records: n });
    }

    /// Switch-crash step: apply everything buffered and forget outstanding
    /// clears and recoveries, whose entries no longer exist.
    pub fn drain_for_switch_recovery(&mut self, now: u64) {
        while !self.buffer.is_empty() {
            self.flush(now);
        }
        let slots: Vec<(u16, u32)> = self.clears.keys().copied().collect();
        for (index, ts) in slots {
            self.log(now, NodeEvent::ClearRetired { index, ts });
            self.counters.retired_clears += 1;
        }
        self.clears.clear();
        self.recovering.clear();
        self.seen.clear();
    }

    /// Indices of valid switch entries owned by this node.
    pub fn owned_indices<'a>(&'a self, sw: &'a VSwitch) -> impl Iterator<Item = u16> + 'a {
        sw.control_valid_indices().filter(move |&i| self.routes.meta_node(i) == self.id)
    }
}

#[cfg(test)]
mod tests;

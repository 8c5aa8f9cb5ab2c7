//! Emulated switch data plane: a register hash table of in-flight metadata
//! with write / read / clear trigger rules, the fallback-response gate and
//! control-plane access.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::mutant::{self, Mutant};
use crate::trace::{SwitchEvent, SwitchRecord};
use crate::wire::{
    Body, Flags, Location, Message, MetaView, MetadataPayload, NodeId, OpType, Timestamp, SWITCH_ID,
};

/// Number of register slots.
pub const TABLE_SIZE: usize = 1 << 16;

/// One visibility-layer slot.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchEntry {
    pub valid: bool,
    pub fingerprint: u32,
    pub cur_ts: Timestamp,
    pub max_ts: Timestamp,
    pub payload: Option<MetadataPayload>,
}

/// Static partition: slot index to owning data node and metadata node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Routes {
    pub data_nodes: Vec<NodeId>,
    pub meta_nodes: Vec<NodeId>,
}

impl Routes {
    pub fn new(data_nodes: Vec<NodeId>, meta_nodes: Vec<NodeId>) -> Self {
        assert!(!data_nodes.is_empty() && !meta_nodes.is_empty(), "routes need at least one node of each kind");
        Routes { data_nodes, meta_nodes }
    }

    pub fn data_node(&self, index: u16) -> NodeId {
        self.data_nodes[index as usize % self.data_nodes.len()]
    }

    pub fn meta_node(&self, index: u16) -> NodeId {
        self.meta_nodes[index as usize % self.meta_nodes.len()]
    }
}

pub struct VSwitch {
    entries: Vec<SwitchEntry>,
    routes: Routes,
    /// False turns the switch into a plain forwarder (baseline system).
    accelerate: bool,
    mutant: Option<Mutant>,
    valid: BTreeSet<u16>,
    trace: Vec<SwitchRecord>,
    now: u64,
}

impl VSwitch {
    pub fn new(routes: Routes, accelerate: bool) -> Self {
        VSwitch {
            entries: vec![SwitchEntry::default(); TABLE_SIZE],
            routes,
            accelerate,
            mutant: None,
            valid: BTreeSet::new(),
            trace: Vec::new(),
            now: 0,
        }
    }

    pub fn with_mutant(mut self, mutant: Option<Mutant>) -> Self {
        self.mutant = mutant;
        self
    }

    pub fn routes(&self) -> &Routes {
        &self.routes
    }

    pub fn trace(&self) -> &[SwitchRecord] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<SwitchRecord> {
        std::mem::take(&mut self.trace)
    }

    pub fn set_time(&mut self, now: u64) {
        self.now = now;
    }

    fn record(&mut self, index: u16, event: SwitchEvent, msg: &Message, pre: &SwitchEntry, log_id: Option<u32>) {
        let post_max_ts = self.entries[index as usize].max_ts.0;
        self.trace.push(SwitchRecord {
            sim_time: self.now,
            index,
            event,
            ts: msg.header.ts.0,
            fingerprint: msg.header.hash.fingerprint,
            req_id: msg.header.req_id,
            pre_valid: pre.valid,
            pre_cur_ts: pre.cur_ts.0,
            pre_max_ts: pre.max_ts.0,
            post_max_ts,
            log_id,
        });
    }

    /// Runs one packet through the pipeline and returns the packets it emits.
    pub fn process(&mut self, now: u64, msg: Message) -> Vec<Message> {
        self.now = now;
        if !self.accelerate {
            return forward(msg);
        }
        match msg.op() {
            OpType::DataWriteResp => self.on_data_write_resp(msg),
            OpType::MetaReadReq => self.on_meta_read_req(msg),
            OpType::ClearReq => self.on_clear_req(msg),
            OpType::MetaUpdateResp if !msg.header.flags.contains(Flags::BLOCKED_RETRY) => self.on_meta_update_resp(msg),
            _ => forward(msg),
        }
    }

    /// Installs the write's metadata when the slot is clear and the
    /// timestamp is newer than anything seen at the slot; otherwise marks the
    /// write for the two-phase path.
    pub fn on_data_write_resp(&mut self, mut msg: Message) -> Vec<Message> {
        let (key, log_id, meta) = match &msg.body {
            Body::DataWriteResp { key, log_id, meta } => (key.clone(), *log_id, meta.clone()),
            _ => return forward(msg),
        };
        let index = msg.index();
        let ts = msg.header.ts;
        let pre = self.entries[index as usize].clone();

        let slot_free = !pre.valid || mutant::is(self.mutant, Mutant::FallbackOnOccupied);
        let newer = ts > pre.max_ts || mutant::is(self.mutant, Mutant::InstallGuard);
        if slot_free && newer && !ts.is_none() {
            let e = &mut self.entries[index as usize];
            e.valid = true;
            e.fingerprint = msg.header.hash.fingerprint;
            e.cur_ts = ts;
            e.max_ts = e.max_ts.max(ts);
            e.payload = Some(meta.clone());
            self.valid.insert(index);
            self.record(index, SwitchEvent::Install, &msg, &pre, Some(log_id));

            msg.header.flags.insert(Flags::ACCELERATED);
            let mut flags = Flags::ACCELERATED;
            if matches!(meta, MetadataPayload::Partial(_)) {
                flags |= Flags::PARTIAL;
            }
            let mirror = Message::new(
                msg.header.dst,
                self.routes.meta_node(index),
                msg.header.hash,
                ts,
                msg.header.req_id,
                Body::MetaUpdateReq { key, meta },
            )
            .with_flags(flags);
            self.record(index, SwitchEvent::Mirror, &mirror, &pre, Some(log_id));
            vec![msg, mirror]
        } else {
            let e = &mut self.entries[index as usize];
            e.max_ts = e.max_ts.max(ts);
            self.record(index, SwitchEvent::Fallback, &msg, &pre, Some(log_id));
            msg.header.flags.insert(Flags::FALLBACK);
            vec![msg]
        }
    }

    /// Full mode: answers the read from the slot on a fingerprint match.
    /// Partial mode: attaches the slot's delta and forwards.
    pub fn on_meta_read_req(&mut self, mut msg: Message) -> Vec<Message> {
        let index = msg.index();
        let meta_node = self.routes.meta_node(index);
        let entry = self.entries[index as usize].clone();
        let matches = entry.valid && entry.fingerprint == msg.header.hash.fingerprint;
        let partial = msg.header.flags.contains(Flags::PARTIAL);

        msg.header.dst = meta_node;
        if !matches {
            self.record(index, SwitchEvent::Miss, &msg, &entry, None);
            return vec![msg];
        }
        match (partial, &entry.payload) {
            (false, Some(MetadataPayload::Full(loc))) => {
                self.record(index, SwitchEvent::Hit, &msg, &entry, Some(loc.log_id));
                let location = Location { log_id: loc.log_id, data_node: self.routes.data_node(index) };
                let reply = Message::new(
                    SWITCH_ID,
                    msg.header.src,
                    msg.header.hash,
                    entry.cur_ts,
                    msg.header.req_id,
                    Body::MetaReadResp(MetaView::Location(location)),
                )
                .with_flags(Flags::ACCELERATED);
                vec![reply]
            }
            (true, Some(delta @ MetadataPayload::Partial(_))) => {
                self.record(index, SwitchEvent::Attach, &msg, &entry, None);
                if let Body::MetaReadReq { attached, .. } = &mut msg.body {
                    *attached = Some(delta.clone());
                }
                msg.header.ts = entry.cur_ts;
                msg.header.flags.insert(Flags::ACCELERATED);
                vec![msg]
            }
            _ => {
                self.record(index, SwitchEvent::Miss, &msg, &entry, None);
                vec![msg]
            }
        }
    }

    /// Invalidates the slot only when the clear carries the installed
    /// timestamp. Clears of an idle slot are acknowledged; mismatches are
    /// dropped.
    pub fn on_clear_req(&mut self, msg: Message) -> Vec<Message> {
        let index = msg.index();
        let ts = msg.header.ts;
        let pre = self.entries[index as usize].clone();
        let ack = || {
            vec![Message::new(SWITCH_ID, msg.header.src, msg.header.hash, ts, msg.header.req_id, Body::ClearAck)]
        };
        if !pre.valid {
            self.record(index, SwitchEvent::ClearIdle, &msg, &pre, None);
            return ack();
        }
        if pre.cur_ts == ts || mutant::is(self.mutant, Mutant::ClearEquality) {
            let e = &mut self.entries[index as usize];
            e.valid = false;
            e.payload = None;
            self.valid.remove(&index);
            self.record(index, SwitchEvent::Clear, &msg, &pre, None);
            return ack();
        }
        self.record(index, SwitchEvent::ClearReject, &msg, &pre, None);
        Vec::new()
    }

    /// Blocks a fallback metadata response while the slot holds an older
    /// committed write. Blocked responses go back to the metadata node
    /// flagged for a later resend.
    pub fn on_meta_update_resp(&mut self, mut msg: Message) -> Vec<Message> {
        let index = msg.index();
        let pre = self.entries[index as usize].clone();
        let blocked = pre.valid && msg.header.ts > pre.cur_ts && !mutant::is(self.mutant, Mutant::ResponseGate);
        if blocked {
            self.record(index, SwitchEvent::Drop, &msg, &pre, None);
            // back to the metadata node; src keeps the client for the resend
            msg.header.flags.insert(Flags::BLOCKED_RETRY);
            std::mem::swap(&mut msg.header.src, &mut msg.header.dst);
            vec![msg]
        } else {
            self.record(index, SwitchEvent::Pass, &msg, &pre, None);
            vec![msg]
        }
    }

    pub fn control_read_entry(&self, index: u16) -> SwitchEntry {
        self.entries[index as usize].clone()
    }

    /// Indices of currently valid entries, ascending.
    pub fn control_valid_indices(&self) -> impl Iterator<Item = u16> + '_ {
        self.valid.iter().copied()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.len()
    }

    /// Control-plane clear with the same equality rule as the data plane.
    pub fn control_clear(&mut self, index: u16, ts: Timestamp) -> bool {
        let pre = self.entries[index as usize].clone();
        if pre.valid && pre.cur_ts == ts {
            let e = &mut self.entries[index as usize];
            e.valid = false;
            e.payload = None;
            self.valid.remove(&index);
            let probe = Message::new(SWITCH_ID, SWITCH_ID, Default::default(), ts, 0, Body::ClearReq);
            self.record(index, SwitchEvent::ControlClear, &probe, &pre, None);
            true
        } else {
            false
        }
    }

    /// Raises MaxTs of every slot owned by `data_node` to at least `ts`.
    pub fn control_reseed(&mut self, data_node: NodeId, ts: Timestamp) {
        for index in 0..TABLE_SIZE {
            if self.routes.data_node(index as u16) == data_node {
                let e = &mut self.entries[index];
                e.max_ts = e.max_ts.max(ts);
            }
        }
        // one summary record per data node; per-slot records would be 64K lines
        let probe = Message::new(data_node, SWITCH_ID, Default::default(), ts, 0, Body::ClearReq);
        self.record(0, SwitchEvent::Reseed, &probe, &SwitchEntry::default(), None);
    }

    /// Power loss: every register returns to zero. Routes survive.
    pub fn crash_reset(&mut self) {
        let probe = Message::new(SWITCH_ID, SWITCH_ID, Default::default(), Timestamp::NONE, 0, Body::ClearReq);
        let pre = SwitchEntry::default();
        for e in &mut self.entries {
            *e = SwitchEntry::default();
        }
        self.valid.clear();
        self.record(0, SwitchEvent::Reset, &probe, &pre, None);
    }
}

fn forward(msg: Message) -> Vec<Message> {
    vec![msg]
}

//! Log-structured data node.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::mutant::{self, Mutant};
use crate::trace::{NodeEvent, NodeRecord};
use crate::vswitch::Routes;
use crate::wire::{
    Body, Flags, HashConfig, Location, Message, MetadataPayload, NodeId, OpType, ReadOutcome, Recovered, Timestamp,
};

/// Control codes used between a data node and its backups.
pub const CTRL_REPLICATE: u8 = 1;
pub const CTRL_REPLICATE_ACK: u8 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DataNodeError {
    #[error("misrouted: slot {index} belongs to node {owner}, not {node}")]
    Misrouted { index: u16, owner: NodeId, node: NodeId },
    #[error("invalid logID {0}")]
    InvalidLogId(u32),
    #[error("timestamp space exhausted")]
    TimestampExhausted,
    #[error("unexpected {0:?} at data node")]
    Unexpected(OpType),
    #[error("empty key")]
    EmptyKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogEntry {
    pub log_id: u32,
    pub key: Vec<u8>,
    pub value: Vec<u8>,
    pub ts: Timestamp,
    pub req_id: u64,
    pub index: u16,
    pub meta: MetadataPayload,
}

/// Strictly increasing logical clock; 0 is never issued.
#[derive(Clone, Debug, Default)]
pub struct TsGenerator {
    last: u32,
}

impl TsGenerator {
    pub fn next(&mut self) -> Result<Timestamp, DataNodeError> {
        self.last = self.last.checked_add(1).ok_or(DataNodeError::TimestampExhausted)?;
        Ok(Timestamp(self.last))
    }

    /// Largest timestamp issued so far.
    pub fn high_water(&self) -> Timestamp {
        Timestamp(self.last)
    }
}

/// One metadata record extracted from the log for replay.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayRecord {
    pub key: Vec<u8>,
    pub log_id: u32,
    pub ts: Timestamp,
    pub index: u16,
    pub meta: MetadataPayload,
}

pub enum WriteOutcome {
    Reply(Message),
    /// Entry appended; these messages go to the backups and the reply waits
    /// for the first acknowledgement.
    Replicate(Vec<Message>),
    /// Duplicate of a write still waiting for backups.
    InProgress,
}

struct PendingWrite {
    resp: Message,
    acks_needed: u32,
}

pub struct DataNode {
    id: NodeId,
    routes: Routes,
    hash: HashConfig,
    log: Vec<LogEntry>,
    ts_gen: TsGenerator,
    by_ts: HashMap<u32, u32>,
    responses: HashMap<u64, Message>,
    backups: Vec<NodeId>,
    pending: HashMap<u64, PendingWrite>,
    mutant: Option<Mutant>,
    trace: Vec<NodeRecord>,
}

impl DataNode {
    pub fn new(id: NodeId, routes: Routes, hash: HashConfig) -> Self {
        DataNode {
            id,
            routes,
            hash,
            log: Vec::new(),
            ts_gen: TsGenerator::default(),
            by_ts: HashMap::new(),
            responses: HashMap::new(),
            backups: Vec::new(),
            pending: HashMap::new(),
            mutant: None,
            trace: Vec::new(),
        }
    }

    /// Enables 1-of-N acknowledged primary-backup replication.
    pub fn with_backups(mut self, backups: Vec<NodeId>) -> Self {
        self.backups = backups;
        self
    }

    pub fn with_mutant(mut self, mutant: Option<Mutant>) -> Self {
        self.mutant = mutant;
        self
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn high_water(&self) -> Timestamp {
        self.ts_gen.high_water()
    }

    pub fn take_trace(&mut self) -> Vec<NodeRecord> {
        std::mem::take(&mut self.trace)
    }

    pub fn handle_data_write(&mut self, now: u64, req: &Message) -> Result<WriteOutcome, DataNodeError> {
        let Body::DataWriteReq { key, value, delta } = &req.body else {
            return Err(DataNodeError::Unexpected(req.op()));
        };
        let req_id = req.header.req_id;
        if let Some(resp) = self.responses.get(&req_id) {
            return Ok(WriteOutcome::Reply(resp.clone()));
        }
        if self.pending.contains_key(&req_id) {
            return Ok(WriteOutcome::InProgress);
        }
        if key.is_empty() {
            return Err(DataNodeError::EmptyKey);
        }
        let index = req.header.hash.index;
        let owner = self.routes.data_node(index);
        if owner != self.id {
            return Err(DataNodeError::Misrouted { index, owner, node: self.id });
        }

        let ts = self.ts_gen.next()?;
        let log_id = u32::try_from(self.log.len()).map_err(|_| DataNodeError::InvalidLogId(u32::MAX))?;
        let meta = match delta {
            Some(d) => MetadataPayload::Partial(d.clone()),
            None => MetadataPayload::Full(Location { log_id, data_node: self.id }),
        };
        self.log.push(LogEntry {
            log_id,
            key: key.clone(),
            value: value.clone(),
            ts,
            req_id,
            index,
            meta: meta.clone(),
        });
        self.by_ts.insert(ts.0, log_id);
        self.trace.push(NodeRecord {
            sim_time: now,
            node: self.id,
            event: NodeEvent::Append { log_id, ts: ts.0, req_id, index },
        });

        let mut resp = Message::new(
            self.id,
            req.header.src,
            req.header.hash,
            ts,
            req_id,
            Body::DataWriteResp { key: key.clone(), log_id, meta },
        );
        if delta.is_some() {
            resp.header.flags.insert(Flags::PARTIAL);
        }

        if self.backups.is_empty() {
            self.responses.insert(req_id, resp.clone());
            return Ok(WriteOutcome::Reply(resp));
        }
        let copies = self
            .backups
            .iter()
            .map(|&b| {
                Message::new(
                    self.id,
                    b,
                    req.header.hash,
                    ts,
                    req_id,
                    Body::Control { code: CTRL_REPLICATE, arg: u64::from(log_id), data: key.clone() },
                )
            })
            .collect();
        self.pending.insert(req_id, PendingWrite { resp, acks_needed: 1 });
        Ok(WriteOutcome::Replicate(copies))
    }

    /// Returns the held write response once enough backups acknowledged.
    pub fn on_backup_ack(&mut self, ack: &Message) -> Option<Message> {
        let req_id = ack.header.req_id;
        let p = self.pending.get_mut(&req_id)?;
        p.acks_needed = p.acks_needed.saturating_sub(1);
        if p.acks_needed > 0 {
            return None;
        }
        let p = self.pending.remove(&req_id)?;
        self.responses.insert(req_id, p.resp.clone());
        Some(p.resp)
    }

    /// Serves a read of `log_id`, checking that the entry belongs to the
    /// queried key.
    pub fn handle_data_read(&self, req: &Message) -> Result<Message, DataNodeError> {
        let Body::DataReadReq { key, log_id } = &req.body else {
            return Err(DataNodeError::Unexpected(req.op()));
        };
        let entry = self.log.get(*log_id as usize).ok_or(DataNodeError::InvalidLogId(*log_id))?;
        let (outcome, ts) = if entry.key == *key || mutant::is(self.mutant, Mutant::KeyValidation) {
            (ReadOutcome::Value(entry.value.clone()), entry.ts)
        } else {
            (ReadOutcome::ValidationFail, Timestamp::NONE)
        };
        Ok(Message::new(self.id, req.header.src, req.header.hash, ts, req.header.req_id, Body::DataReadResp(outcome)))
    }

    /// Newest metadata per key with `ts > since`. Partial-mode entries are
    /// all emitted since every delta may carry distinct fields.
    pub fn replay_metadata(&self, since: Option<Timestamp>) -> Vec<ReplayRecord> {
        let floor = since.unwrap_or(Timestamp::NONE);
        let mut newest: BTreeMap<&[u8], &LogEntry> = BTreeMap::new();
        let mut partial: Vec<&LogEntry> = Vec::new();
        for e in self.log.iter().filter(|e| e.ts > floor) {
            match e.meta {
                MetadataPayload::Full(_) => {
                    let slot = newest.entry(&e.key).or_insert(e);
                    if e.ts > slot.ts {
                        *slot = e;
                    }
                }
                MetadataPayload::Partial(_) => partial.push(e),
            }
        }
        partial.sort_by(|a, b| a.key.cmp(&b.key).then(a.ts.cmp(&b.ts)));
        newest
            .into_values()
            .chain(partial)
            .map(|e| ReplayRecord { key: e.key.clone(), log_id: e.log_id, ts: e.ts, index: e.index, meta: e.meta.clone() })
            .collect()
    }

    /// Looks up the entry written at `(index, ts)`.
    pub fn recover_by_ts(&self, req: &Message) -> Message {
        let found = self
            .by_ts
            .get(&req.header.ts.0)
            .map(|&id| &self.log[id as usize])
            .filter(|e| e.index == req.header.hash.index)
            .map(|e| Recovered { key: e.key.clone(), log_id: e.log_id, meta: e.meta.clone() });
        Message::new(self.id, req.header.src, req.header.hash, req.header.ts, req.header.req_id, Body::RecoverResp(found))
    }

    /// Checks that every stored key hashes to a slot owned by this node.
    pub fn partition_respected(&self) -> bool {
        self.log.iter().all(|e| {
            self.hash.hash(&e.key).map(|h| self.routes.data_node(h.index) == self.id).unwrap_or(false)
        })
    }

    /// Log dump as JSON lines `{log_id, key, ts, req_id}`.
    pub fn dump(&self) -> String {
        #[derive(Serialize)]
        struct Row {
            log_id: u32,
            key: String,
            ts: u32,
            req_id: u64,
        }
        let rows: Vec<Row> = self
            .log
            .iter()
            .map(|e| Row { log_id: e.log_id, key: hex::encode(&e.key), ts: e.ts.0, req_id: e.req_id })
            .collect();
        crate::trace::to_json_lines(&rows)
    }
}

/// Passive replica that stores copies and acknowledges them.
#[derive(Default)]
pub struct BackupReplica {
    pub id: NodeId,
    pub entries: Vec<(u32, Timestamp, Vec<u8>)>,
}

impl BackupReplica {
    pub fn new(id: NodeId) -> Self {
        BackupReplica { id, entries: Vec::new() }
    }

    pub fn handle(&mut self, msg: &Message) -> Option<Message> {
        let Body::Control { code: CTRL_REPLICATE, arg, data } = &msg.body else {
            return None;
        };
        self.entries.push((*arg as u32, msg.header.ts, data.clone()));
        Some(Message::new(
            self.id,
            msg.header.src,
            msg.header.hash,
            msg.header.ts,
            msg.header.req_id,
            Body::Control { code: CTRL_REPLICATE_ACK, arg: *arg, data: Vec::new() },
        ))
    }
}

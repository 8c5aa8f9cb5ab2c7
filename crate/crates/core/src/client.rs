//! Client session: one outstanding operation at a time, driven by messages
//! and timeouts from the simulator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vswitch::Routes;
use crate::wire::{
    make_req_id, Body, FieldDelta, Flags, HashConfig, KeyHash, Message, MetaView, MetadataPayload, NodeId, ReadOutcome,
    Timestamp, WireError,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Read,
    Write,
    PartialWrite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Path {
    /// Write committed by the switch or read resolved by it.
    Accelerated,
    /// Write completed through the metadata node; read resolved there.
    Fallback,
    /// Baseline system, always two phases.
    Baseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Committed,
    Aborted,
}

/// One completed (or abandoned) client operation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEvent {
    pub op_id: u64,
    pub client: NodeId,
    /// Request id on the wire; ties the operation to trace records.
    #[serde(default)]
    pub req_id: u64,
    #[serde(rename = "type")]
    pub kind: OpKind,
    /// Hex-encoded key.
    pub key: String,
    /// Simulated nanoseconds.
    pub invoke: u64,
    pub response: Option<u64>,
    /// Writes: the written value id. Full-mode reads: the value id read, 0
    /// when not found.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<u64>,
    /// Partial writes: the fields written. Partial reads: all field values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_id: Option<u32>,
    pub ts: u32,
    pub path: Path,
    pub attempts: u32,
    pub outcome: Outcome,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClientError {
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    Accelerated,
}

/// What the workload asks a session to do.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRequest {
    pub kind: OpKind,
    pub key: Vec<u8>,
    /// Unique id of the written value; encoded into the value bytes.
    pub value_id: u64,
    pub value_size: usize,
    pub delta: Option<FieldDelta>,
}

/// Value bytes carrying `id` in the first eight bytes.
pub fn encode_value(id: u64, size: usize) -> Vec<u8> {
    let mut v = id.to_be_bytes().to_vec();
    v.resize(size.max(8), 0);
    v
}

pub fn decode_value(bytes: &[u8]) -> u64 {
    let mut b = [0u8; 8];
    let n = bytes.len().min(8);
    b[..n].copy_from_slice(&bytes[..n]);
    u64::from_be_bytes(b)
}

#[derive(Clone, Debug)]
enum Phase {
    DataWrite,
    MetaUpdate { ts: Timestamp, meta: MetadataPayload },
    MetaRead,
    DataRead { log_id: u32, node: NodeId },
}

#[derive(Clone, Debug)]
struct OpContext {
    op_id: u64,
    req: OpRequest,
    req_id: u64,
    hash: KeyHash,
    phase: Phase,
    attempts: u32,
    invoke: u64,
    path: Path,
    /// Bumped on every send so stale timeouts can be recognised.
    generation: u64,
    ts: Timestamp,
    log_id: Option<u32>,
}

/// Messages to send, and the finished operation if one completed.
#[derive(Debug, Default)]
pub struct Output {
    pub send: Vec<Message>,
    pub done: Option<HistoryEvent>,
    /// Arm a timeout for this generation.
    pub arm: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct ClientConfig {
    pub mode: Mode,
    pub partial: bool,
    pub timeout_ns: u64,
    pub max_retries: u32,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig { mode: Mode::Accelerated, partial: false, timeout_ns: 500_000, max_retries: 64 }
    }
}

pub struct Session {
    id: NodeId,
    routes: Routes,
    hash: HashConfig,
    cfg: ClientConfig,
    counter: u64,
    generation: u64,
    current: Option<OpContext>,
    /// Client-visible messages sent and received for the current operation.
    pub messages: u32,
}

impl Session {
    pub fn new(id: NodeId, routes: Routes, hash: HashConfig, cfg: ClientConfig) -> Self {
        Session { id, routes, hash, cfg, counter: 0, generation: 0, current: None, messages: 0 }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn busy(&self) -> bool {
        self.current.is_some()
    }

    /// Invokes an operation.
    pub fn start(&mut self, now: u64, op_id: u64, req: OpRequest) -> Result<Output, ClientError> {
        assert!(self.current.is_none(), "session already has an operation in flight");
        let hash = self.hash.hash(&req.key)?;
        if let Some(d) = &req.delta {
            MetadataPayload::Partial(d.clone()).check_size()?;
        }
        self.counter += 1;
        let phase = if req.kind == OpKind::Read { Phase::MetaRead } else { Phase::DataWrite };
        let path = match self.cfg.mode {
            Mode::Baseline => Path::Baseline,
            Mode::Accelerated => Path::Accelerated,
        };
        self.messages = 0;
        self.current = Some(OpContext {
            op_id,
            req,
            req_id: make_req_id(self.id, self.counter),
            hash,
            phase,
            attempts: 1,
            invoke: now,
            path,
            generation: 0,
            ts: Timestamp::NONE,
            log_id: None,
        });
        Ok(self.send_phase())
    }

    fn send_phase(&mut self) -> Output {
        self.generation += 1;
        let partial = self.cfg.partial;
        let id = self.id;
        let ctx = self.current.as_mut().expect("operation in flight");
        ctx.generation = self.generation;
        let index = ctx.hash.index;
        let msg = match &ctx.phase {
            Phase::DataWrite => {
                let value = encode_value(ctx.req.value_id, ctx.req.value_size);
                let m = Message::new(
                    id,
                    self.routes.data_node(index),
                    ctx.hash,
                    Timestamp::NONE,
                    ctx.req_id,
                    Body::DataWriteReq { key: ctx.req.key.clone(), value, delta: ctx.req.delta.clone() },
                );
                if ctx.req.delta.is_some() { m.with_flags(Flags::PARTIAL) } else { m }
            }
            Phase::MetaUpdate { ts, meta, .. } => {
                let mut flags = Flags::FALLBACK;
                if matches!(meta, MetadataPayload::Partial(_)) {
                    flags |= Flags::PARTIAL;
                }
                Message::new(
                    id,
                    self.routes.meta_node(index),
                    ctx.hash,
                    *ts,
                    ctx.req_id,
                    Body::MetaUpdateReq { key: ctx.req.key.clone(), meta: meta.clone() },
                )
                .with_flags(flags)
            }
            Phase::MetaRead => {
                let m = Message::new(
                    id,
                    self.routes.meta_node(index),
                    ctx.hash,
                    Timestamp::NONE,
                    ctx.req_id,
                    Body::MetaReadReq { key: ctx.req.key.clone(), attached: None },
                );
                if partial { m.with_flags(Flags::PARTIAL) } else { m }
            }
            Phase::DataRead { log_id, node } => Message::new(
                id,
                *node,
                ctx.hash,
                Timestamp::NONE,
                ctx.req_id,
                Body::DataReadReq { key: ctx.req.key.clone(), log_id: *log_id },
            ),
        };
        self.messages += 1;
        Output { send: vec![msg], done: None, arm: Some(self.generation) }
    }

    fn finish(&mut self, now: u64, outcome: Outcome, value: Option<u64>, fields: Option<Vec<u32>>) -> Output {
        let ctx = self.current.take().expect("operation in flight");
        let (value, fields) = match ctx.req.kind {
            OpKind::Read => (value, fields),
            OpKind::Write => (Some(ctx.req.value_id), None),
            OpKind::PartialWrite => {
                let written = ctx.req.delta.as_ref().map(|d| d.iter().map(|(f, _)| f as u32).collect());
                (Some(ctx.req.value_id), written)
            }
        };
        let event = HistoryEvent {
            op_id: ctx.op_id,
            client: self.id,
            req_id: ctx.req_id,
            kind: ctx.req.kind,
            key: hex::encode(&ctx.req.key),
            invoke: ctx.invoke,
            response: (outcome == Outcome::Committed).then_some(now),
            value,
            fields,
            log_id: ctx.log_id,
            ts: ctx.ts.0,
            path: ctx.path,
            attempts: ctx.attempts,
            outcome,
        };
        Output { send: Vec::new(), done: Some(event), arm: None }
    }

    /// Retries the whole read after a failed validation.
    fn restart_read(&mut self, now: u64) -> Output {
        let max = self.cfg.max_retries;
        let ctx = self.current.as_mut().expect("operation in flight");
        ctx.attempts += 1;
        if ctx.attempts > max {
            return self.finish(now, Outcome::Aborted, None, None);
        }
        ctx.phase = Phase::MetaRead;
        self.send_phase()
    }

    pub fn on_message(&mut self, now: u64, msg: &Message) -> Output {
        let Some(ctx) = self.current.as_mut() else {
            return Output::default();
        };
        if msg.header.req_id != ctx.req_id {
            return Output::default();
        }
        let flags = msg.header.flags;
        match (&ctx.phase, &msg.body) {
            (Phase::DataWrite | Phase::MetaUpdate { .. }, Body::DataWriteResp { .. })
                if flags.contains(Flags::ACCELERATED) && self.cfg.mode == Mode::Accelerated =>
            {
                if let Body::DataWriteResp { log_id, .. } = &msg.body {
                    ctx.log_id = Some(*log_id);
                }
                ctx.ts = msg.header.ts;
                ctx.path = Path::Accelerated;
                self.messages += 1;
                self.finish(now, Outcome::Committed, None, None)
            }
            (Phase::DataWrite, Body::DataWriteResp { log_id, meta, .. }) => {
                ctx.log_id = Some(*log_id);
                ctx.ts = msg.header.ts;
                if self.cfg.mode == Mode::Accelerated {
                    ctx.path = Path::Fallback;
                }
                ctx.phase = Phase::MetaUpdate { ts: msg.header.ts, meta: meta.clone() };
                self.messages += 1;
                self.send_phase()
            }
            (Phase::MetaUpdate { .. }, Body::MetaUpdateResp) => {
                self.messages += 1;
                self.finish(now, Outcome::Committed, None, None)
            }
            (Phase::MetaRead, Body::MetaReadResp(view)) => {
                self.messages += 1;
                ctx.ts = msg.header.ts;
                ctx.path = match self.cfg.mode {
                    Mode::Baseline => Path::Baseline,
                    Mode::Accelerated if flags.contains(Flags::ACCELERATED) => Path::Accelerated,
                    Mode::Accelerated => Path::Fallback,
                };
                match view {
                    MetaView::NotFound => self.finish(now, Outcome::Committed, Some(0), None),
                    MetaView::Fields(v) => self.finish(now, Outcome::Committed, None, Some(v.clone())),
                    MetaView::Location(loc) => {
                        ctx.log_id = Some(loc.log_id);
                        ctx.phase = Phase::DataRead { log_id: loc.log_id, node: loc.data_node };
                        self.send_phase()
                    }
                }
            }
            (Phase::DataRead { .. }, Body::DataReadResp(outcome)) => {
                self.messages += 1;
                match outcome {
                    ReadOutcome::Value(v) => {
                        ctx.ts = msg.header.ts;
                        let id = decode_value(v);
                        self.finish(now, Outcome::Committed, Some(id), None)
                    }
                    ReadOutcome::ValidationFail | ReadOutcome::InvalidLogId => self.restart_read(now),
                }
            }
            _ => Output::default(),
        }
    }

    /// Timeout for `generation`; stale generations are ignored.
    pub fn on_timeout(&mut self, now: u64, generation: u64) -> Output {
        let max = self.cfg.max_retries;
        let Some(ctx) = self.current.as_mut() else {
            return Output::default();
        };
        if ctx.generation != generation {
            return Output::default();
        }
        ctx.attempts += 1;
        if ctx.attempts > max {
            return self.finish(now, Outcome::Aborted, None, None);
        }
        self.send_phase()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{Location, OpType};

    const C: NodeId = 100;

    fn session(mode: Mode) -> Session {
        Session::new(C, Routes::new(vec![1], vec![2]), HashConfig::default(), ClientConfig { mode, ..Default::default() })
    }

    fn write_req(key: &[u8]) -> OpRequest {
        OpRequest { kind: OpKind::Write, key: key.to_vec(), value_id: 42, value_size: 120, delta: None }
    }

    fn data_resp(req: &Message, flags: Flags) -> Message {
        Message::new(1, C, req.header.hash, Timestamp(3), req.header.req_id, Body::DataWriteResp {
            key: b"k".to_vec(),
            log_id: 0,
            meta: MetadataPayload::Full(Location { log_id: 0, data_node: 1 }),
        })
        .with_flags(flags)
    }

    #[test]
    fn accelerated_write_is_one_round_trip() {
        let mut s = session(Mode::Accelerated);
        let out = s.start(0, 1, write_req(b"k")).unwrap();
        assert_eq!(out.send[0].op(), OpType::DataWriteReq);
        assert_eq!(decode_value(match &out.send[0].body { Body::DataWriteReq { value, .. } => value, _ => panic!() }), 42);
        let done = s.on_message(10, &data_resp(&out.send[0], Flags::ACCELERATED)).done.unwrap();
        assert_eq!((done.path, done.outcome, done.ts, done.value), (Path::Accelerated, Outcome::Committed, 3, Some(42)));
        assert_eq!(s.messages, 2);
    }

    #[test]
    fn fallback_write_takes_second_phase() {
        let mut s = session(Mode::Accelerated);
        let out = s.start(0, 1, write_req(b"k")).unwrap();
        let req = out.send[0].clone();
        let p2 = s.on_message(10, &data_resp(&req, Flags::FALLBACK));
        assert!(p2.done.is_none());
        let m = &p2.send[0];
        assert_eq!((m.op(), m.header.dst, m.header.ts), (OpType::MetaUpdateReq, 2, Timestamp(3)));
        let resp = Message::new(2, C, m.header.hash, Timestamp(3), m.header.req_id, Body::MetaUpdateResp);
        let done = s.on_message(20, &resp).done.unwrap();
        assert_eq!((done.path, done.response), (Path::Fallback, Some(20)));
    }

    #[test]
    fn timeouts_retry_with_same_req_id_then_abort() {
        let mut s = Session::new(
            C,
            Routes::new(vec![1], vec![2]),
            HashConfig::default(),
            ClientConfig { max_retries: 3, ..Default::default() },
        );
        let out = s.start(0, 1, write_req(b"k")).unwrap();
        let rid = out.send[0].header.req_id;
        let mut gen = out.arm.unwrap();
        // stale generation ignored
        assert!(s.on_timeout(1, gen + 7).send.is_empty());
        for _ in 0..2 {
            let o = s.on_timeout(500_000, gen);
            assert_eq!(o.send[0].header.req_id, rid);
            gen = o.arm.unwrap();
        }
        let done = s.on_timeout(1_500_000, gen).done.unwrap();
        assert_eq!((done.outcome, done.response, done.attempts), (Outcome::Aborted, None, 4));
    }

    #[test]
    fn read_retries_after_validation_failure() {
        let mut s = session(Mode::Accelerated);
        let read = OpRequest { kind: OpKind::Read, key: b"B".to_vec(), value_id: 0, value_size: 0, delta: None };
        let out = s.start(0, 1, read).unwrap();
        let req = out.send[0].clone();
        let loc = Message::new(0, C, req.header.hash, Timestamp(3), req.header.req_id, Body::MetaReadResp(MetaView::Location(Location { log_id: 3, data_node: 1 })))
            .with_flags(Flags::ACCELERATED);
        let dr = s.on_message(1, &loc).send.remove(0);
        assert_eq!(dr.op(), OpType::DataReadReq);
        let fail = Message::new(1, C, req.header.hash, Timestamp::NONE, req.header.req_id, Body::DataReadResp(ReadOutcome::ValidationFail));
        let again = s.on_message(2, &fail).send.remove(0);
        assert_eq!(again.op(), OpType::MetaReadReq);
        let nf = Message::new(2, C, req.header.hash, Timestamp::NONE, req.header.req_id, Body::MetaReadResp(MetaView::NotFound));
        let done = s.on_message(3, &nf).done.unwrap();
        assert_eq!((done.value, done.attempts, done.path), (Some(0), 2, Path::Fallback));
    }

    #[test]
    fn oversize_delta_rejected_locally() {
        let mut s = session(Mode::Accelerated);
        let pairs: Vec<(usize, u32)> = (0..23).map(|f| (f, 1)).collect();
        let req = OpRequest { kind: OpKind::PartialWrite, key: b"k".to_vec(), value_id: 1, value_size: 8, delta: Some(FieldDelta::from_pairs(&pairs)) };
        assert!(matches!(s.start(0, 1, req), Err(ClientError::Wire(WireError::PayloadOverflow { .. }))));
        assert!(!s.busy());
    }

    #[test]
    fn baseline_always_two_phases() {
        let mut s = session(Mode::Baseline);
        let out = s.start(0, 1, write_req(b"k")).unwrap();
        let p2 = s.on_message(1, &data_resp(&out.send[0], Flags::empty()));
        assert_eq!(p2.send[0].op(), OpType::MetaUpdateReq);
    }
}

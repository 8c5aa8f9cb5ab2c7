//! Protocol messages, the visibility header, key hashing and the canonical
//! byte encoding.

mod codec;
mod hash;

pub use codec::{decode, encode, HEADER_LEN};
pub use hash::{fmix64, hash_key, HashConfig, FINGERPRINT_BITS, INDEX_BITS};

use bitflags::bitflags;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Node address. The switch is always [`SWITCH_ID`].
pub type NodeId = u16;

pub const SWITCH_ID: NodeId = 0;

/// Maximum encoded size of a [`MetadataPayload`].
pub const MAX_METADATA_BYTES: usize = 96;

/// Number of fixed-size fields in a partial-mode metadata record.
pub const FIELD_COUNT: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("empty key")]
    EmptyKey,
    #[error("payload overflow")]
    PayloadOverflow { len: usize },
    #[error("truncated")]
    Truncated,
    #[error("unknown op")]
    UnknownOp(u8),
    #[error("malformed: {0}")]
    Malformed(&'static str),
}

/// Slot index and fingerprint of a key.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeyHash {
    pub index: u16,
    pub fingerprint: u32,
}

/// Logical per-data-node timestamp. Zero means "no timestamp".
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u32);

impl Timestamp {
    pub const NONE: Timestamp = Timestamp(0);

    pub fn is_none(self) -> bool {
        self.0 == 0
    }
}

impl std::fmt::Display for Timestamp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum OpType {
    DataWriteReq = 1,
    DataWriteResp = 2,
    DataReadReq = 3,
    DataReadResp = 4,
    MetaUpdateReq = 5,
    MetaUpdateResp = 6,
    MetaReadReq = 7,
    MetaReadResp = 8,
    ClearReq = 9,
    ClearAck = 10,
    RecoverReq = 11,
    RecoverResp = 12,
    Control = 13,
}

impl OpType {
    pub fn from_u8(b: u8) -> Result<Self, WireError> {
        use OpType::*;
        Ok(match b {
            1 => DataWriteReq,
            2 => DataWriteResp,
            3 => DataReadReq,
            4 => DataReadResp,
            5 => MetaUpdateReq,
            6 => MetaUpdateResp,
            7 => MetaReadReq,
            8 => MetaReadResp,
            9 => ClearReq,
            10 => ClearAck,
            11 => RecoverReq,
            12 => RecoverResp,
            13 => Control,
            other => return Err(WireError::UnknownOp(other)),
        })
    }
}

bitflags! {
    #[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
    pub struct Flags: u8 {
        const ACCELERATED = 0b0001;
        const FALLBACK = 0b0010;
        const PARTIAL = 0b0100;
        const BLOCKED_RETRY = 0b1000;
    }
}

/// Fixed header carried by every protocol packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeltaHeader {
    pub op: OpType,
    pub flags: Flags,
    pub src: NodeId,
    pub dst: NodeId,
    pub hash: KeyHash,
    pub ts: Timestamp,
    pub req_id: u64,
}

/// Builds a request id from a client index and that client's counter.
pub fn make_req_id(client: u16, counter: u64) -> u64 {
    (u64::from(client) << 48) | (counter & ((1 << 48) - 1))
}

/// Where a full-mode value lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Location {
    pub log_id: u32,
    pub data_node: NodeId,
}

/// A partial update: a bitmap over [`FIELD_COUNT`] fields plus the new
/// values of the set fields in ascending field order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldDelta {
    pub bitmap: u32,
    pub values: Vec<u32>,
}

impl FieldDelta {
    pub fn from_pairs(pairs: &[(usize, u32)]) -> Self {
        let mut sorted: Vec<(usize, u32)> = pairs.to_vec();
        sorted.sort_by_key(|p| p.0);
        sorted.dedup_by_key(|p| p.0);
        let mut delta = FieldDelta::default();
        for (f, v) in sorted {
            assert!(f < FIELD_COUNT, "field {f} out of range");
            delta.bitmap |= 1 << f;
            delta.values.push(v);
        }
        delta
    }

    /// `(field, value)` pairs in ascending field order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        (0..FIELD_COUNT)
            .filter(move |f| self.bitmap & (1 << f) != 0)
            .zip(self.values.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.bitmap.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.bitmap == 0
    }

    pub fn is_consistent(&self) -> bool {
        self.len() == self.values.len()
    }
}

/// Metadata carried by write responses and held in switch entries.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetadataPayload {
    Full(Location),
    Partial(FieldDelta),
}

impl MetadataPayload {
    pub fn encoded_len(&self) -> usize {
        match self {
            MetadataPayload::Full(_) => 1 + 4 + 2,
            MetadataPayload::Partial(d) => 1 + 4 + 4 * d.values.len(),
        }
    }

    pub fn check_size(&self) -> Result<(), WireError> {
        let len = self.encoded_len();
        if len > MAX_METADATA_BYTES {
            Err(WireError::PayloadOverflow { len })
        } else {
            Ok(())
        }
    }

    pub fn location(&self) -> Option<Location> {
        match self {
            MetadataPayload::Full(l) => Some(*l),
            MetadataPayload::Partial(_) => None,
        }
    }
}

/// Outcome of a data-node read.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReadOutcome {
    Value(Vec<u8>),
    ValidationFail,
    InvalidLogId,
}

/// What a metadata read resolved to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MetaView {
    NotFound,
    Location(Location),
    /// Full partial-mode record: every field value.
    Fields(Vec<u32>),
}

/// A log entry returned by timestamp recovery.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Recovered {
    pub key: Vec<u8>,
    pub log_id: u32,
    pub meta: MetadataPayload,
}

/// Variant payloads. The op type in the header is derived from the body.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Body {
    DataWriteReq { key: Vec<u8>, value: Vec<u8>, delta: Option<FieldDelta> },
    DataWriteResp { key: Vec<u8>, log_id: u32, meta: MetadataPayload },
    DataReadReq { key: Vec<u8>, log_id: u32 },
    DataReadResp(ReadOutcome),
    MetaUpdateReq { key: Vec<u8>, meta: MetadataPayload },
    MetaUpdateResp,
    MetaReadReq { key: Vec<u8>, attached: Option<MetadataPayload> },
    MetaReadResp(MetaView),
    ClearReq,
    ClearAck,
    RecoverReq,
    RecoverResp(Option<Recovered>),
    Control { code: u8, arg: u64, data: Vec<u8> },
}

impl Body {
    pub fn op(&self) -> OpType {
        match self {
            Body::DataWriteReq { .. } => OpType::DataWriteReq,
            Body::DataWriteResp { .. } => OpType::DataWriteResp,
            Body::DataReadReq { .. } => OpType::DataReadReq,
            Body::DataReadResp(_) => OpType::DataReadResp,
            Body::MetaUpdateReq { .. } => OpType::MetaUpdateReq,
            Body::MetaUpdateResp => OpType::MetaUpdateResp,
            Body::MetaReadReq { .. } => OpType::MetaReadReq,
            Body::MetaReadResp(_) => OpType::MetaReadResp,
            Body::ClearReq => OpType::ClearReq,
            Body::ClearAck => OpType::ClearAck,
            Body::RecoverReq => OpType::RecoverReq,
            Body::RecoverResp(_) => OpType::RecoverResp,
            Body::Control { .. } => OpType::Control,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub header: DeltaHeader,
    pub body: Body,
}

impl Message {
    pub fn new(src: NodeId, dst: NodeId, hash: KeyHash, ts: Timestamp, req_id: u64, body: Body) -> Self {
        Message {
            header: DeltaHeader {
                op: body.op(),
                flags: Flags::empty(),
                src,
                dst,
                hash,
                ts,
                req_id,
            },
            body,
        }
    }

    pub fn with_flags(mut self, flags: Flags) -> Self {
        self.header.flags |= flags;
        self
    }

    pub fn op(&self) -> OpType {
        self.header.op
    }

    pub fn index(&self) -> u16 {
        self.header.hash.index
    }

    pub fn key(&self) -> Option<&[u8]> {
        match &self.body {
            Body::DataWriteReq { key, .. }
            | Body::DataWriteResp { key, .. }
            | Body::DataReadReq { key, .. }
            | Body::MetaUpdateReq { key, .. }
            | Body::MetaReadReq { key, .. } => Some(key),
            Body::RecoverResp(Some(r)) => Some(&r.key),
            _ => None,
        }
    }
}

//! Structured trace records emitted by the switch and the storage nodes.
//!
//! Traces are written as JSON lines and consumed by the trace checker and
//! by the metrics aggregation.

use serde::{Deserialize, Serialize};

use crate::wire::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchEvent {
    /// Write response installed its metadata.
    Install,
    /// Mirrored metadata update emitted towards a metadata node.
    Mirror,
    /// Write response found the slot unusable.
    Fallback,
    /// Entry invalidated by a matching clear.
    Clear,
    /// Clear for an already-invalid slot, acknowledged without change.
    ClearIdle,
    /// Clear whose timestamp does not match the installed one; dropped.
    ClearReject,
    /// Fallback metadata response blocked by the visibility gate.
    Drop,
    /// Fallback metadata response allowed through to the client.
    Pass,
    /// Read resolved by the switch.
    Hit,
    /// Read forwarded unchanged to the metadata node.
    Miss,
    /// Partial-mode read forwarded with the in-switch delta attached.
    Attach,
    /// Whole table wiped by a crash.
    Reset,
    /// MaxTs raised by the control plane during recovery.
    Reseed,
    /// Entry invalidated through the control plane.
    ControlClear,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchRecord {
    /// Simulated time in nanoseconds.
    pub sim_time: u64,
    pub index: u16,
    pub event: SwitchEvent,
    pub ts: u32,
    pub fingerprint: u32,
    pub req_id: u64,
    pub pre_valid: bool,
    pub pre_cur_ts: u32,
    pub pre_max_ts: u32,
    pub post_max_ts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_id: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplySource {
    /// Deferred (mirrored) update.
    Async,
    /// Critical-path fallback or baseline update.
    Sync,
    /// Stale-entry recovery through a data node.
    Recover,
    /// Replay from data nodes after a crash.
    Replay,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeEvent {
    Append { log_id: u32, ts: u32, req_id: u64, index: u16 },
    Apply { key: String, ts: u32, prev_ts: u32, result_ts: u32, source: ApplySource },
    /// Keys in the order a deferred batch touched the index.
    Batch { keys: Vec<String> },
    ClearSent { index: u16, ts: u32 },
    ClearAcked { index: u16, ts: u32 },
    /// Outstanding clear dropped because the entry no longer holds its timestamp.
    ClearRetired { index: u16, ts: u32 },
    Crash,
    Rebuild { records: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub sim_time: u64,
    pub node: NodeId,
    #[serde(flatten)]
    pub event: NodeEvent,
}

/// Writes any serializable records as JSON lines.
pub fn to_json_lines<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
        out.push('\n');
    }
    out
}

/// Parses JSON lines, skipping blank lines.
pub fn from_json_lines<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

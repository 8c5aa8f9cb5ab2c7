//! Per-register linearizability.
//!
//! Each key (each key/field pair in partial mode) is an independent
//! read/write register. The candidate order puts writes in timestamp order
//! and places every operation as early as real time allows; if that fails
//! and the register is small enough, a memoised search over all orders
//! decides.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{HistoryEvent, OpKind, Outcome};
use crate::wire::FIELD_COUNT;

/// Initial register value ("not found").
pub const INITIAL: u64 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    Read,
    Write,
}

/// One operation on one register.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RegOp {
    pub op_id: u64,
    pub kind: RegKind,
    pub value: u64,
    /// Write order hint; ignored for reads.
    pub ts: u32,
    pub invoke: u64,
    /// `u64::MAX` for writes that never completed.
    pub response: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub key: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<u8>,
    pub reason: String,
    /// Operations that together cannot be ordered.
    pub witness: Vec<u64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HistoryError {
    #[error("malformed history: {0}")]
    Malformed(String),
}

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    /// Registers with at most this many operations get the exhaustive
    /// search when the candidate order fails.
    pub exhaustive_limit: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { exhaustive_limit: 20 }
    }
}

/// Splits a history into registers. Aborted reads carry no information and
/// are dropped; aborted writes are kept (open-ended) only if some read saw
/// their value.
pub fn registers(history: &[HistoryEvent]) -> Result<BTreeMap<(String, Option<u8>), Vec<RegOp>>, HistoryError> {
    let mut observed: HashSet<(String, Option<u8>, u64)> = HashSet::new();
    let mut written_fields: HashMap<&str, HashSet<u8>> = HashMap::new();
    for e in history {
        if let Some(r) = e.response {
            if r < e.invoke {
                return Err(HistoryError::Malformed(format!("op {} responds before it is invoked", e.op_id)));
            }
        }
        if e.outcome == Outcome::Committed && e.response.is_none() {
            return Err(HistoryError::Malformed(format!("committed op {} has no response", e.op_id)));
        }
        match e.kind {
            OpKind::Read => {
                if e.outcome == Outcome::Aborted {
                    continue;
                }
                match (&e.fields, e.value) {
                    (Some(fields), _) => {
                        for (f, v) in fields.iter().enumerate() {
                            observed.insert((e.key.clone(), Some(f as u8), u64::from(*v)));
                        }
                    }
                    (None, Some(v)) => {
                        observed.insert((e.key.clone(), None, v));
                    }
                    (None, None) => return Err(HistoryError::Malformed(format!("read {} has no result", e.op_id))),
                }
            }
            OpKind::PartialWrite => {
                let set = written_fields.entry(&e.key).or_default();
                for f in e.fields.iter().flatten() {
                    if *f as usize >= FIELD_COUNT {
                        return Err(HistoryError::Malformed(format!("field {f} out of range")));
                    }
                    set.insert(*f as u8);
                }
            }
            OpKind::Write => {}
        }
    }

    let mut regs: BTreeMap<(String, Option<u8>), Vec<RegOp>> = BTreeMap::new();
    for e in history {
        let response = e.response.unwrap_or(u64::MAX);
        match e.kind {
            OpKind::Write | OpKind::PartialWrite => {
                let value = e.value.ok_or_else(|| HistoryError::Malformed(format!("write {} has no value", e.op_id)))?;
                if value == INITIAL {
                    return Err(HistoryError::Malformed(format!("write {} uses the initial value", e.op_id)));
                }
                let fields: Vec<Option<u8>> = match e.kind {
                    OpKind::PartialWrite => e.fields.iter().flatten().map(|f| Some(*f as u8)).collect(),
                    _ => vec![None],
                };
                for field in fields {
                    // partial-mode values are carried as 32-bit field values
                    let v = if field.is_some() { value & 0xffff_ffff } else { value };
                    if e.outcome == Outcome::Aborted && !observed.contains(&(e.key.clone(), field, v)) {
                        continue;
                    }
                    regs.entry((e.key.clone(), field)).or_default().push(RegOp {
                        op_id: e.op_id,
                        kind: RegKind::Write,
                        value: v,
                        ts: e.ts,
                        invoke: e.invoke,
                        response,
                    });
                }
            }
            OpKind::Read => {
                if e.outcome == Outcome::Aborted {
                    continue;
                }
                match &e.fields {
                    Some(fields) => {
                        let written = written_fields.get(e.key.as_str());
                        for (f, v) in fields.iter().enumerate() {
                            let f = f as u8;
                            let touched = written.is_some_and(|w| w.contains(&f));
                            if !touched && *v == 0 {
                                continue;
                            }
                            regs.entry((e.key.clone(), Some(f))).or_default().push(RegOp {
                                op_id: e.op_id,
                                kind: RegKind::Read,
                                value: u64::from(*v),
                                ts: 0,
                                invoke: e.invoke,
                                response,
                            });
                        }
                    }
                    None => regs.entry((e.key.clone(), None)).or_default().push(RegOp {
                        op_id: e.op_id,
                        kind: RegKind::Read,
                        value: e.value.unwrap_or(INITIAL),
                        ts: 0,
                        invoke: e.invoke,
                        response,
                    }),
                }
            }
        }
    }
    Ok(regs)
}

/// Result of checking one register: `None` when linearizable.
pub type RegVerdict = Option<(String, Vec<u64>)>;

/// Candidate order: writes by timestamp, each operation placed as early as
/// real time permits.
pub fn check_candidate(ops: &[RegOp]) -> RegVerdict {
    let mut writes: Vec<&RegOp> = ops.iter().filter(|o| o.kind == RegKind::Write).collect();
    writes.sort_by_key(|w| (w.ts, w.op_id));
    for pair in writes.windows(2) {
        if pair[0].value == pair[1].value {
            return Some(("value written twice".into(), vec![pair[0].op_id, pair[1].op_id]));
        }
    }
    let mut reads_of: HashMap<u64, Vec<&RegOp>> = HashMap::new();
    for r in ops.iter().filter(|o| o.kind == RegKind::Read) {
        reads_of.entry(r.value).or_default().push(r);
    }
    for (v, rs) in &reads_of {
        if *v != INITIAL && !writes.iter().any(|w| w.value == *v) {
            return Some(("read returned a value never written".into(), vec![rs[0].op_id]));
        }
    }

    // (point, op that forced it)
    let mut point: (u64, Option<u64>) = (0, None);
    let mut prev_value = INITIAL;
    let latest_read_inv = |v: u64| -> Option<(u64, u64)> {
        reads_of.get(&v).and_then(|rs| rs.iter().map(|r| (r.invoke, r.op_id)).max())
    };
    for w in &writes {
        let mut x = point;
        if w.invoke > x.0 {
            x = (w.invoke, Some(w.op_id));
        }
        if let Some((inv, id)) = latest_read_inv(prev_value) {
            if inv > x.0 {
                x = (inv, Some(id));
            }
        }
        if x.0 > w.response {
            let mut witness = vec![w.op_id];
            witness.extend(x.1.filter(|id| *id != w.op_id));
            return Some(("write cannot take effect inside its interval".into(), witness));
        }
        if let Some(rs) = reads_of.get(&w.value) {
            if let Some(r) = rs.iter().filter(|r| r.response < x.0).min_by_key(|r| r.response) {
                let mut witness = vec![r.op_id];
                witness.extend(x.1.filter(|id| *id != r.op_id));
                if !witness.contains(&w.op_id) {
                    witness.push(w.op_id);
                }
                return Some(("read finished before the value it returned was written".into(), witness));
            }
        }
        point = x;
        prev_value = w.value;
    }
    // reads of the last value can always be placed after everything else
    None
}

/// Exhaustive search over orders consistent with real time.
pub fn check_exhaustive(ops: &[RegOp]) -> bool {
    assert!(ops.len() <= 63, "exhaustive search is for small registers");
    let n = ops.len();
    let full: u64 = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let mut seen: HashSet<(u64, u64)> = HashSet::new();
    fn dfs(ops: &[RegOp], done: u64, full: u64, value: u64, seen: &mut HashSet<(u64, u64)>) -> bool {
        if done == full {
            return true;
        }
        if !seen.insert((done, value)) {
            return false;
        }
        let min_resp = (0..ops.len()).filter(|i| done & (1 << i) == 0).map(|i| ops[i].response).min().unwrap_or(u64::MAX);
        for i in 0..ops.len() {
            if done & (1 << i) != 0 || ops[i].invoke > min_resp {
                continue;
            }
            let o = &ops[i];
            let next = match o.kind {
                RegKind::Write => o.value,
                RegKind::Read if o.value == value => value,
                RegKind::Read => continue,
            };
            if dfs(ops, done | (1 << i), full, next, seen) {
                return true;
            }
        }
        false
    }
    dfs(ops, 0, full, INITIAL, &mut seen)
}

/// Checks one register: candidate first, exhaustive fallback when small.
pub fn check_register(ops: &[RegOp], opts: CheckOptions) -> RegVerdict {
    let verdict = check_candidate(ops)?;
    if ops.len() <= opts.exhaustive_limit.min(63) && check_exhaustive(ops) {
        return None;
    }
    Some(verdict)
}

pub fn check_linearizable(history: &[HistoryEvent], opts: CheckOptions) -> Result<Vec<Violation>, HistoryError> {
    let regs = registers(history)?;
    let mut out = Vec::new();
    for ((key, field), ops) in &regs {
        if let Some((reason, witness)) = check_register(ops, opts) {
            out.push(Violation { key: key.clone(), field: *field, reason, witness });
        }
    }
    Ok(out)
}

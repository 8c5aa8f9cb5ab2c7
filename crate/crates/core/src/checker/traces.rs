//! Protocol rules evaluated over the switch and node traces of one run.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::client::{HistoryEvent, OpKind, Outcome};
use crate::netsim::FinalRecord;
use crate::trace::{NodeEvent, NodeRecord, SwitchEvent, SwitchRecord};
use crate::wire::NodeId;

/// Most offending events listed per rule.
const MAX_DETAILS: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleVerdict {
    pub rule: String,
    pub pass: bool,
    /// Events the rule looked at.
    pub checked: u64,
    pub failures: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
}

struct Rule {
    v: RuleVerdict,
}

impl Rule {
    fn new(name: &str) -> Self {
        Rule { v: RuleVerdict { rule: name.into(), pass: true, checked: 0, failures: 0, details: Vec::new() } }
    }

    fn check(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.v.checked += 1;
        if !ok {
            self.v.pass = false;
            self.v.failures += 1;
            if self.v.details.len() < MAX_DETAILS {
                self.v.details.push(detail());
            }
        }
    }

    fn done(self) -> RuleVerdict {
        self.v
    }
}

/// End-of-run facts the trace rules need besides the traces themselves.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_valid: usize,
    pub drained: bool,
    pub protocol_errors: u64,
    pub conserved: bool,
    pub final_records: Vec<FinalRecord>,
}

fn sw(r: &SwitchRecord) -> String {
    format!("t={} index={} {:?} ts={} req={:#x}", r.sim_time, r.index, r.event, r.ts, r.req_id)
}

pub fn check_max_ts_monotonic(trace: &[SwitchRecord]) -> RuleVerdict {
    let mut rule = Rule::new("max_ts_monotonic");
    let mut last: HashMap<u16, u32> = HashMap::new();
    for r in trace {
        match r.event {
            SwitchEvent::Reset => last.clear(),
            // summary records; the raise they describe is not per slot
            SwitchEvent::Reseed => {}
            // carries the state from before the install it follows
            SwitchEvent::Mirror => {}
            _ => {
                let prev = last.get(&r.index).copied().unwrap_or(0);
                rule.check(r.pre_max_ts >= prev && r.post_max_ts >= r.pre_max_ts, || {
                    format!("{} max_ts {} -> {} after {}", sw(r), r.pre_max_ts, r.post_max_ts, prev)
                });
                last.insert(r.index, r.post_max_ts);
            }
        }
    }
    rule.done()
}

pub fn check_install_guard(trace: &[SwitchRecord]) -> RuleVerdict {
    let mut rule = Rule::new("install_guard");
    for r in trace.iter().filter(|r| r.event == SwitchEvent::Install) {
        rule.check(!r.pre_valid && r.ts > r.pre_max_ts, || {
            format!("{} pre_valid={} pre_max_ts={}", sw(r), r.pre_valid, r.pre_max_ts)
        });
    }
    rule.done()
}

pub fn check_clear_guard(trace: &[SwitchRecord]) -> RuleVerdict {
    let mut rule = Rule::new("clear_equality");
    for r in trace.iter().filter(|r| matches!(r.event, SwitchEvent::Clear | SwitchEvent::ControlClear)) {
        rule.check(r.pre_valid && r.ts == r.pre_cur_ts, || format!("{} cur_ts={}", sw(r), r.pre_cur_ts));
    }
    rule.done()
}

pub fn check_gate(trace: &[SwitchRecord]) -> RuleVerdict {
    let mut rule = Rule::new("gate_soundness");
    for r in trace.iter().filter(|r| r.event == SwitchEvent::Pass) {
        rule.check(!(r.pre_valid && r.ts > r.pre_cur_ts), || format!("{} passed over cur_ts={}", sw(r), r.pre_cur_ts));
    }
    rule.done()
}

pub fn check_mirror_exactness(trace: &[SwitchRecord]) -> RuleVerdict {
    let mut rule = Rule::new("mirror_exactness");
    let mut counts: BTreeMap<(u16, u32, u64, Option<u32>), (u32, u32)> = BTreeMap::new();
    for r in trace {
        let c = counts.entry((r.index, r.ts, r.req_id, r.log_id));
        match r.event {
            SwitchEvent::Install => c.or_default().0 += 1,
            SwitchEvent::Mirror => c.or_default().1 += 1,
            _ => {}
        }
    }
    for ((index, ts, req_id, _), (installs, mirrors)) in counts {
        rule.check(installs == mirrors, || {
            format!("index={index} ts={ts} req={req_id:#x}: {installs} installs, {mirrors} mirrors")
        });
    }
    rule.done()
}

pub fn check_newest_wins(nodes: &[NodeRecord]) -> RuleVerdict {
    let mut rule = Rule::new("newest_wins");
    for r in nodes {
        if let NodeEvent::Apply { key, ts, prev_ts, result_ts, .. } = &r.event {
            rule.check(*result_ts == (*prev_ts).max(*ts), || {
                format!("t={} node={} key={key} ts={ts} prev={prev_ts} result={result_ts}", r.sim_time, r.node)
            });
        }
    }
    rule.done()
}

pub fn check_timestamps(nodes: &[NodeRecord]) -> RuleVerdict {
    let mut rule = Rule::new("timestamp_monotonic");
    let mut last: HashMap<NodeId, (u32, u32)> = HashMap::new();
    for r in nodes {
        if let NodeEvent::Append { log_id, ts, .. } = r.event {
            let ok = match last.get(&r.node) {
                None => log_id == 0 && ts > 0,
                Some(&(pl, pt)) => log_id == pl + 1 && ts > pt,
            };
            rule.check(ok, || format!("t={} node={} log_id={log_id} ts={ts} after {:?}", r.sim_time, r.node, last.get(&r.node)));
            last.insert(r.node, (log_id, ts));
        }
    }
    rule.done()
}

/// Every committed write is reflected in the final metadata.
pub fn check_durability(history: &[HistoryEvent], finals: &[FinalRecord]) -> RuleVerdict {
    let mut rule = Rule::new("durability");
    let by_key: HashMap<&str, &FinalRecord> = finals.iter().map(|f| (f.key.as_str(), f)).collect();
    for e in history.iter().filter(|e| e.outcome == Outcome::Committed) {
        let rec = by_key.get(e.key.as_str());
        match e.kind {
            OpKind::Read => {}
            OpKind::Write => rule.check(rec.is_some_and(|r| r.ts >= e.ts), || {
                format!("op {} key={} ts={} final={:?}", e.op_id, e.key, e.ts, rec.map(|r| r.ts))
            }),
            OpKind::PartialWrite => {
                for &f in e.fields.iter().flatten() {
                    let got = rec.and_then(|r| r.field_ts.as_ref()).and_then(|t| t.get(f as usize)).copied();
                    rule.check(got.is_some_and(|t| t >= e.ts), || {
                        format!("op {} key={} field={f} ts={} final={got:?}", e.op_id, e.key, e.ts)
                    });
                }
            }
        }
    }
    rule.done()
}

pub fn check_summary(summary: &RunSummary) -> Vec<RuleVerdict> {
    let mut live = Rule::new("clear_liveness");
    live.check(summary.final_valid == 0, || format!("{} switch entries still valid", summary.final_valid));
    let mut proto = Rule::new("protocol_errors");
    proto.check(summary.protocol_errors == 0, || format!("{} protocol errors", summary.protocol_errors));
    let mut cons = Rule::new("message_conservation");
    cons.check(summary.conserved, || "sent and accounted message counts differ".into());
    vec![live.done(), proto.done(), cons.done()]
}

/// All trace rules for one run.
pub fn check_traces(
    history: &[HistoryEvent],
    switch: &[SwitchRecord],
    nodes: &[NodeRecord],
    summary: &RunSummary,
) -> Vec<RuleVerdict> {
    let mut out = vec![
        check_max_ts_monotonic(switch),
        check_install_guard(switch),
        check_clear_guard(switch),
        check_gate(switch),
        check_mirror_exactness(switch),
        check_newest_wins(nodes),
        check_timestamps(nodes),
        check_durability(history, &summary.final_records),
    ];
    out.extend(check_summary(summary));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(event: SwitchEvent, ts: u32, pre_valid: bool, cur: u32, max: u32, post: u32) -> SwitchRecord {
        SwitchRecord {
            sim_time: 0,
            index: 1,
            event,
            ts,
            fingerprint: 0,
            req_id: 9,
            pre_valid,
            pre_cur_ts: cur,
            pre_max_ts: max,
            post_max_ts: post,
            log_id: None,
        }
    }

    #[test]
    fn install_guard_flags_stale_install() {
        let good = [rec(SwitchEvent::Install, 3, false, 0, 2, 3)];
        assert!(check_install_guard(&good).pass);
        let bad = [rec(SwitchEvent::Install, 3, false, 0, 3, 3)];
        assert!(!check_install_guard(&bad).pass);
    }

    #[test]
    fn max_ts_must_not_drop_except_after_reset() {
        let t = [rec(SwitchEvent::Fallback, 5, true, 3, 3, 5), rec(SwitchEvent::Fallback, 4, true, 3, 4, 4)];
        assert!(!check_max_ts_monotonic(&t).pass);
        let t = [
            rec(SwitchEvent::Fallback, 5, true, 3, 3, 5),
            rec(SwitchEvent::Reset, 0, false, 0, 0, 0),
            rec(SwitchEvent::Fallback, 1, false, 0, 0, 1),
        ];
        assert!(check_max_ts_monotonic(&t).pass);
    }

    #[test]
    fn gate_and_clear_rules() {
        assert!(!check_gate(&[rec(SwitchEvent::Pass, 4, true, 3, 4, 4)]).pass);
        assert!(check_gate(&[rec(SwitchEvent::Pass, 4, true, 5, 5, 5)]).pass);
        assert!(!check_clear_guard(&[rec(SwitchEvent::Clear, 3, true, 5, 5, 5)]).pass);
    }

    #[test]
    fn unmatched_install_breaks_mirror_exactness() {
        let t = [rec(SwitchEvent::Install, 3, false, 0, 0, 3)];
        assert!(!check_mirror_exactness(&t).pass);
        let t = [rec(SwitchEvent::Install, 3, false, 0, 0, 3), rec(SwitchEvent::Mirror, 3, false, 0, 0, 3)];
        assert!(check_mirror_exactness(&t).pass);
    }

    #[test]
    fn log_ids_dense_and_ts_increasing() {
        let a = |log_id, ts| NodeRecord { sim_time: 0, node: 1, event: NodeEvent::Append { log_id, ts, req_id: 0, index: 0 } };
        assert!(check_timestamps(&[a(0, 1), a(1, 2)]).pass);
        assert!(!check_timestamps(&[a(0, 1), a(1, 1)]).pass);
        assert!(!check_timestamps(&[a(0, 1), a(2, 2)]).pass);
    }
}

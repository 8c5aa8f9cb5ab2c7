//! Consistency checking of recorded runs: per-key linearizability of the
//! client history plus the protocol rules visible in the traces.

pub mod linear;
pub mod traces;

pub use linear::{
    check_candidate, check_exhaustive, check_linearizable, check_register, registers, CheckOptions, HistoryError, RegKind, RegOp,
    RegVerdict, Violation, INITIAL,
};
pub use traces::{check_traces, RuleVerdict, RunSummary};

use serde::{Deserialize, Serialize};

use crate::client::HistoryEvent;
use crate::netsim::RunReport;
use crate::trace::{NodeRecord, SwitchRecord};

/// Verdict report for one run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub pass: bool,
    pub operations: usize,
    pub linearizable: bool,
    pub violations: Vec<Violation>,
    pub rules: Vec<RuleVerdict>,
}

impl Report {
    pub fn failed_rules(&self) -> impl Iterator<Item = &str> {
        self.rules.iter().filter(|r| !r.pass).map(|r| r.rule.as_str())
    }
}

pub fn summarize(report: &RunReport) -> RunSummary {
    RunSummary {
        final_valid: report.final_valid,
        drained: report.drained,
        protocol_errors: report.stats.protocol_errors,
        conserved: report.stats.conserved(),
        final_records: report.final_records.clone(),
    }
}

pub fn check_parts(
    history: &[HistoryEvent],
    switch: &[SwitchRecord],
    nodes: &[NodeRecord],
    summary: &RunSummary,
    opts: CheckOptions,
) -> Result<Report, HistoryError> {
    let violations = check_linearizable(history, opts)?;
    let rules = check_traces(history, switch, nodes, summary);
    let linearizable = violations.is_empty();
    Ok(Report {
        pass: linearizable && rules.iter().all(|r| r.pass),
        operations: history.len(),
        linearizable,
        violations,
        rules,
    })
}

pub fn check_run(report: &RunReport, opts: CheckOptions) -> Result<Report, HistoryError> {
    check_parts(&report.history, &report.switch_trace, &report.node_trace, &summarize(report), opts)
}

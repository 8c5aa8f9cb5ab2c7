//! Aggregates a finished run into the reported metrics.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::client::{OpKind, Outcome, Path};
use crate::netsim::RunReport;
use crate::trace::SwitchEvent;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyRow {
    pub op: String,
    /// "all" or a completion path.
    pub path: String,
    pub count: usize,
    pub p50_us: f64,
    pub p99_us: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SwitchCounts {
    pub hit: u64,
    pub attach: u64,
    pub miss: u64,
    pub install: u64,
    pub fallback: u64,
    pub gate_drop: u64,
    pub clear: u64,
    pub clear_reject: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub ops: usize,
    pub committed: usize,
    pub aborted: usize,
    pub sim_seconds: f64,
    /// Committed operations per simulated second.
    pub throughput: f64,
    pub latency: Vec<LatencyRow>,
    pub accelerated_read_pct: f64,
    pub non_accelerated_write_pct: f64,
    pub switch: SwitchCounts,
    pub resends: u64,
    pub gate_resends: u64,
    pub recoveries: u64,
    pub retired_clears: u64,
    pub batches: u64,
    pub async_applied: u64,
    pub sync_applied: u64,
    pub messages_lost: u64,
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn pct(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

fn op_name(k: OpKind) -> &'static str {
    match k {
        OpKind::Read => "read",
        OpKind::Write => "write",
        OpKind::PartialWrite => "partial_write",
    }
}

fn path_name(p: Path) -> &'static str {
    match p {
        Path::Accelerated => "accelerated",
        Path::Fallback => "fallback",
        Path::Baseline => "baseline",
    }
}

pub fn switch_counts(report: &RunReport) -> SwitchCounts {
    let mut c = SwitchCounts::default();
    for r in &report.switch_trace {
        match r.event {
            SwitchEvent::Hit => c.hit += 1,
            SwitchEvent::Attach => c.attach += 1,
            SwitchEvent::Miss => c.miss += 1,
            SwitchEvent::Install => c.install += 1,
            SwitchEvent::Fallback => c.fallback += 1,
            SwitchEvent::Drop => c.gate_drop += 1,
            SwitchEvent::Clear => c.clear += 1,
            SwitchEvent::ClearReject => c.clear_reject += 1,
            _ => {}
        }
    }
    c
}

pub fn aggregate(report: &RunReport) -> MetricsReport {
    let mut groups: BTreeMap<(&str, &str), Vec<u64>> = BTreeMap::new();
    let mut committed = 0;
    for e in &report.history {
        let (Outcome::Committed, Some(resp)) = (e.outcome, e.response) else { continue };
        committed += 1;
        let lat = resp - e.invoke;
        groups.entry((op_name(e.kind), "all")).or_default().push(lat);
        groups.entry((op_name(e.kind), path_name(e.path))).or_default().push(lat);
    }
    let latency = groups
        .into_iter()
        .map(|((op, path), mut v)| {
            v.sort_unstable();
            LatencyRow {
                op: op.into(),
                path: path.into(),
                count: v.len(),
                p50_us: percentile(&v, 50.0) as f64 / 1000.0,
                p99_us: percentile(&v, 99.0) as f64 / 1000.0,
            }
        })
        .collect();

    let sw = switch_counts(report);
    let sim_seconds = report.stats.ops_done_ns as f64 / 1e9;
    let sum = |f: fn(&crate::metanode::MetaCounters) -> u64| report.meta_counters.iter().map(f).sum::<u64>();
    MetricsReport {
        ops: report.history.len(),
        committed,
        aborted: report.history.len() - committed,
        sim_seconds,
        throughput: if sim_seconds > 0.0 { committed as f64 / sim_seconds } else { 0.0 },
        latency,
        accelerated_read_pct: pct(sw.hit + sw.attach, sw.hit + sw.attach + sw.miss),
        non_accelerated_write_pct: pct(sw.fallback, sw.install + sw.fallback),
        resends: sum(|c| c.resends),
        gate_resends: sum(|c| c.gate_resends),
        recoveries: sum(|c| c.recoveries),
        retired_clears: sum(|c| c.retired_clears),
        batches: sum(|c| c.batches),
        async_applied: sum(|c| c.async_applied),
        sync_applied: sum(|c| c.sync_applied),
        messages_lost: report.stats.lost + report.stats.lost_down + report.stats.targeted_drops,
        switch: sw,
    }
}

impl MetricsReport {
    /// P50 of one op type over all paths, in microseconds.
    pub fn p50(&self, op: &str) -> Option<f64> {
        self.latency.iter().find(|r| r.op == op && r.path == "all").map(|r| r.p50_us)
    }

    /// Flat (metric, value) pairs in a fixed order.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("ops".to_string(), self.ops as f64),
            ("committed".into(), self.committed as f64),
            ("aborted".into(), self.aborted as f64),
            ("sim_seconds".into(), self.sim_seconds),
            ("throughput_ops_per_s".into(), self.throughput),
            ("accelerated_read_pct".into(), self.accelerated_read_pct),
            ("non_accelerated_write_pct".into(), self.non_accelerated_write_pct),
        ];
        for r in &self.latency {
            out.push((format!("{}_{}_count", r.op, r.path), r.count as f64));
            out.push((format!("{}_{}_p50_us", r.op, r.path), r.p50_us));
            out.push((format!("{}_{}_p99_us", r.op, r.path), r.p99_us));
        }
        let s = &self.switch;
        for (name, v) in [
            ("switch_hit", s.hit),
            ("switch_attach", s.attach),
            ("switch_miss", s.miss),
            ("switch_install", s.install),
            ("switch_fallback", s.fallback),
            ("switch_gate_drop", s.gate_drop),
            ("switch_clear", s.clear),
            ("switch_clear_reject", s.clear_reject),
            ("resends", self.resends),
            ("gate_resends", self.gate_resends),
            ("recoveries", self.recoveries),
            ("retired_clears", self.retired_clears),
            ("batches", self.batches),
            ("async_applied", self.async_applied),
            ("sync_applied", self.sync_applied),
            ("messages_lost", self.messages_lost),
        ] {
            out.push((name.into(), v as f64));
        }
        out
    }
}

/// One CSV line of the metrics table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CsvRow {
    pub config_hash: String,
    pub point: String,
    pub metric: String,
    pub value: f64,
}

pub fn csv_rows(config_hash: &str, point: &str, m: &MetricsReport) -> Vec<CsvRow> {
    m.rows()
        .into_iter()
        .map(|(metric, value)| CsvRow { config_hash: config_hash.into(), point: point.into(), metric, value })
        .collect()
}

pub fn to_csv(rows: &[CsvRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("csv rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

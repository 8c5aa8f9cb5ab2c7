//! Experiment harness: configuration, runs, sweeps, calibration and the
//! files a run leaves behind.
//!
//! Latencies are simulated microseconds and throughput is operations per
//! simulated second; they are not hardware numbers.

pub mod metrics;
pub mod workload;
pub mod zipf;

pub use metrics::{aggregate, csv_rows, to_csv, CsvRow, MetricsReport};
pub use workload::{SystemMode, WorkloadSpec, ZipfWorkload};

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::checker::{self, CheckOptions};
use crate::netsim::{ConfigError, RunReport, Sim, SimConfig};
use crate::trace::to_json_lines;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] ConfigError),
    #[error(transparent)]
    History(#[from] checker::HistoryError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Toml(#[from] toml::de::Error),
}

/// Everything one run needs. `sim.seed` is ignored in favour of `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub workload: WorkloadSpec,
    pub sim: SimConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig { seed: 1, workload: WorkloadSpec::default(), sim: SimConfig::default() }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Simulator settings with the workload's system switches applied.
    pub fn sim_config(&self) -> SimConfig {
        let w = &self.workload;
        let mut s = self.sim.clone();
        s.seed = self.seed;
        s.sessions = w.concurrency();
        s.accelerate = w.mode == SystemMode::Switchdelta;
        s.partial = w.partial;
        s.meta.dmp = w.dmp;
        s.backups = if w.replication { 2 } else { 0 };
        s
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        self.workload.validate().map_err(BenchError::Config)?;
        self.sim_config().validate()?;
        Ok(())
    }

    /// Short stable digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

pub struct Experiment {
    pub config_hash: String,
    pub metrics: MetricsReport,
    pub verdict: checker::Report,
    pub report: RunReport,
}

impl Experiment {
    pub fn pass(&self) -> bool {
        self.verdict.pass
    }
}

/// Runs the simulator without checking; for callers that only want raw output.
pub fn simulate(cfg: &ExperimentConfig) -> Result<RunReport, BenchError> {
    cfg.validate()?;
    let mut sim = Sim::new(cfg.sim_config())?;
    sim.set_workload(Box::new(ZipfWorkload::new(cfg.workload.clone(), cfg.seed)), cfg.workload.op_count);
    sim.run();
    Ok(sim.finish())
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment, BenchError> {
    let report = simulate(cfg)?;
    let verdict = checker::check_run(&report, CheckOptions::default())?;
    Ok(Experiment { config_hash: cfg.hash(), metrics: aggregate(&report), verdict, report })
}

/// Writes a run's outputs into `dir`.
pub fn write_artifacts(dir: &Path, cfg: &ExperimentConfig, point: &str, e: &Experiment) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    fs::write(dir.join("history.jsonl"), to_json_lines(&e.report.history))?;
    fs::write(dir.join("switch_trace.jsonl"), to_json_lines(&e.report.switch_trace))?;
    fs::write(dir.join("node_trace.jsonl"), to_json_lines(&e.report.node_trace))?;
    let summary = checker::summarize(&e.report);
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    fs::write(dir.join("verdict.json"), serde_json::to_string_pretty(&e.verdict).expect("verdict serializes") + "\n")?;
    fs::write(dir.join("metrics.csv"), to_csv(&csv_rows(&e.config_hash, point, &e.metrics)))?;
    for (i, dump) in e.report.index_dumps.iter().enumerate() {
        fs::write(dir.join(format!("index_mn{i}.jsonl")), dump)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Total outstanding operations; mapped onto queue depth 1 per client.
    Concurrency,
    Theta,
    DataNodes,
    MetaNodes,
    ReadRatio,
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "concurrency" => Axis::Concurrency,
            "theta" => Axis::Theta,
            "data_nodes" | "data-nodes" => Axis::DataNodes,
            "meta_nodes" | "meta-nodes" => Axis::MetaNodes,
            "read_ratio" | "read-ratio" => Axis::ReadRatio,
            _ => return Err(format!("unknown sweep axis {s:?}")),
        })
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Concurrency => "concurrency",
            Axis::Theta => "theta",
            Axis::DataNodes => "data_nodes",
            Axis::MetaNodes => "meta_nodes",
            Axis::ReadRatio => "read_ratio",
        }
    }

    /// The config for one point on the axis.
    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig, BenchError> {
        let mut c = base.clone();
        let count = || -> Result<usize, BenchError> {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(BenchError::Config(format!("{} needs a positive integer, got {value}", self.name())));
            }
            Ok(value as usize)
        };
        match self {
            Axis::Concurrency => {
                // keep the per-client depth when it divides the target
                let n = count()?;
                let q = c.workload.queue_depth.max(1);
                if n % q == 0 {
                    c.workload.clients = n / q;
                } else {
                    c.workload.clients = n;
                    c.workload.queue_depth = 1;
                }
            }
            Axis::Theta => c.workload.theta = value,
            Axis::DataNodes => c.sim.data_nodes = count()?,
            Axis::MetaNodes => c.sim.meta_nodes = count()?,
            Axis::ReadRatio => c.workload.read_ratio = value,
        }
        c.validate()?;
        Ok(c)
    }
}

pub struct SweepPoint {
    pub label: String,
    pub config: ExperimentConfig,
    pub experiment: Experiment,
}

/// Runs every point with the base seed; points run in parallel.
pub fn sweep(base: &ExperimentConfig, axis: Axis, values: &[f64]) -> Result<Vec<SweepPoint>, BenchError> {
    let configs = values
        .iter()
        .map(|&v| Ok((format!("{}={v}", axis.name()), axis.apply(base, v)?)))
        .collect::<Result<Vec<_>, BenchError>>()?;
    configs
        .into_par_iter()
        .map(|(label, config)| {
            let experiment = run_experiment(&config)?;
            Ok(SweepPoint { label, config, experiment })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let rows: Vec<CsvRow> =
        points.iter().flat_map(|p| csv_rows(&p.experiment.config_hash, &p.label, &p.experiment.metrics)).collect();
    to_csv(&rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Calibration {
    pub dn_write_ns: u64,
    pub baseline_p50_us: f64,
    pub accelerated_p50_us: f64,
    pub reduction_pct: f64,
    pub log: Vec<String>,
}

/// Write-only P50 of both systems at low concurrency.
pub fn write_p50s(base: &ExperimentConfig) -> Result<(f64, f64), BenchError> {
    let mut b = base.clone();
    b.workload.read_ratio = 0.0;
    b.workload.mode = SystemMode::Baseline;
    let mut a = b.clone();
    a.workload.mode = SystemMode::Switchdelta;
    let (rb, ra) = rayon::join(|| simulate(&b), || simulate(&a));
    let p50 = |r: RunReport| aggregate(&r).p50("write").unwrap_or(0.0);
    Ok((p50(rb?), p50(ra?)))
}

/// Bisects the data-node write cost until the write latency reduction of
/// the accelerated system hits `target_pct`. The reduction shrinks as the
/// data phase grows, so the search is monotone.
pub fn calibrate(base: &ExperimentConfig, target_pct: f64, steps: usize) -> Result<Calibration, BenchError> {
    let (mut lo, mut hi) = (100u64, 20_000u64);
    let mut log = Vec::new();
    let mut best: Option<Calibration> = None;
    for step in 0..steps {
        let mid = (lo + hi) / 2;
        let mut c = base.clone();
        c.sim.latency.dn_write_ns = mid;
        let (b, a) = write_p50s(&c)?;
        let reduction = 100.0 * (b - a) / b;
        log.push(format!(
            "step {step}: dn_write_ns={mid} baseline_p50={b:.3}us accelerated_p50={a:.3}us reduction={reduction:.2}%"
        ));
        let cand = Calibration { dn_write_ns: mid, baseline_p50_us: b, accelerated_p50_us: a, reduction_pct: reduction, log: Vec::new() };
        if best.as_ref().is_none_or(|x| (x.reduction_pct - target_pct).abs() > (reduction - target_pct).abs()) {
            best = Some(cand);
        }
        if reduction > target_pct {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 10 {
            break;
        }
    }
    let mut best = best.expect("at least one step");
    best.log = log;
    Ok(best)
}

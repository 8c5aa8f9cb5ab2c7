use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use switchdelta::bench::{self, Axis, ExperimentConfig, SystemMode};
use switchdelta::checker::{self, CheckOptions, RunSummary};
use switchdelta::trace::from_json_lines;

#[derive(Parser)]
#[command(name = "switchdelta", version, about = "Simulate, check and benchmark the in-switch visibility layer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One experiment.
    Run(RunArgs),
    /// One experiment per value along an axis.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// concurrency, theta, data_nodes, meta_nodes or read_ratio
        #[arg(long)]
        axis: Axis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Re-check the outputs of an earlier run.
    Check {
        /// Directory written by `run --out`.
        dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        exhaustive_limit: usize,
    },
    /// Tune the data-node write cost to a target write latency reduction.
    Calibrate {
        #[command(flatten)]
        run: RunArgs,
        /// Target P50 write latency reduction, percent.
        #[arg(long, default_value_t = 46.5)]
        target: f64,
        #[arg(long, default_value_t = 16)]
        steps: usize,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML file with `seed`, `[workload]` and `[sim]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    key_space: Option<u64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    read_ratio: Option<f64>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    queue_depth: Option<usize>,
    #[arg(long)]
    op_count: Option<u64>,
    /// baseline or switchdelta
    #[arg(long, value_parser = parse_mode)]
    mode: Option<SystemMode>,
    #[arg(long)]
    dmp: Option<bool>,
    #[arg(long)]
    replication: Option<bool>,
    #[arg(long)]
    partial: Option<bool>,
    #[arg(long)]
    partial_fields: Option<usize>,
}

fn parse_mode(s: &str) -> Result<SystemMode, String> {
    match s {
        "baseline" => Ok(SystemMode::Baseline),
        "switchdelta" => Ok(SystemMode::Switchdelta),
        _ => Err(format!("expected baseline or switchdelta, got {s:?}")),
    }
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::from_toml(&text)?
            }
            None => ExperimentConfig::default(),
        };
        let w = &mut c.workload;
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { w.$f = v; } )* };
        }
        set!(key_space, theta, read_ratio, clients, queue_depth, op_count, mode, dmp, replication, partial, partial_fields);
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}

fn print_metrics(point: &str, e: &bench::Experiment) {
    let m = &e.metrics;
    let p50 = |op| m.p50(op).map_or("-".to_string(), |v| format!("{v:.2}us"));
    println!(
        "{point} [{}]: {} ops, {:.0} ops/s, write p50 {}, read p50 {}, accelerated reads {:.2}%, non-accelerated writes {:.2}%",
        e.config_hash,
        m.committed,
        m.throughput,
        p50("write"),
        p50("read"),
        m.accelerated_read_pct,
        m.non_accelerated_write_pct
    );
}

fn print_verdict(v: &checker::Report) {
    if v.pass {
        println!("verdict: pass ({} operations)", v.operations);
        return;
    }
    println!("verdict: FAIL");
    for x in v.violations.iter().take(5) {
        println!("  key {} field {:?}: {} (ops {:?})", x.key, x.field, x.reason, x.witness);
    }
    for r in v.rules.iter().filter(|r| !r.pass) {
        println!("  rule {}: {} failures", r.rule, r.failures);
        for d in &r.details {
            println!("    {d}");
        }
    }
}

fn status(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(args: &RunArgs) -> Result<ExitCode> {
    let cfg = args.config()?;
    let e = bench::run_experiment(&cfg)?;
    print_metrics("run", &e);
    print_verdict(&e.verdict);
    if let Some(dir) = &args.out {
        bench::write_artifacts(dir, &cfg, "run", &e)?;
    }
    Ok(status(e.pass()))
}

fn sweep(args: &RunArgs, axis: Axis, values: &[f64]) -> Result<ExitCode> {
    let base = args.config()?;
    let points = bench::sweep(&base, axis, values)?;
    let mut pass = true;
    for p in &points {
        print_metrics(&p.label, &p.experiment);
        if !p.experiment.pass() {
            print_verdict(&p.experiment.verdict);
        }
        pass &= p.experiment.pass();
    }
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("sweep.csv"), bench::sweep_csv(&points))?;
        for p in &points {
            bench::write_artifacts(&dir.join(&p.label), &p.config, &p.label, &p.experiment)?;
        }
    }
    println!("verdict: {}", if pass { "pass" } else { "FAIL" });
    Ok(status(pass))
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let p = dir.join(name);
    fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))
}

fn check(dir: &Path, exhaustive_limit: usize) -> Result<ExitCode> {
    let history = from_json_lines(&read(dir, "history.jsonl")?)?;
    let switch = from_json_lines(&read(dir, "switch_trace.jsonl")?)?;
    let nodes = from_json_lines(&read(dir, "node_trace.jsonl")?)?;
    let summary: RunSummary = serde_json::from_str(&read(dir, "summary.json")?)?;
    let v = checker::check_parts(&history, &switch, &nodes, &summary, CheckOptions { exhaustive_limit })?;
    print_verdict(&v);
    println!("{}", serde_json::to_string_pretty(&v)?);
    Ok(status(v.pass))
}

fn calibrate(args: &RunArgs, target: f64, steps: usize) -> Result<ExitCode> {
    if !(0.0..100.0).contains(&target) {
        bail!("target must be a percentage");
    }
    let mut cfg = args.config()?;
    // low-concurrency write-only unless told otherwise
    if args.clients.is_none() && args.queue_depth.is_none() && args.config.is_none() {
        cfg.workload.clients = 6;
        cfg.workload.queue_depth = 1;
    }
    let c = bench::calibrate(&cfg, target, steps)?;
    for line in &c.log {
        println!("{line}");
    }
    println!(
        "calibrated dn_write_ns={} baseline p50 {:.3}us accelerated p50 {:.3}us reduction {:.2}%",
        c.dn_write_ns, c.baseline_p50_us, c.accelerated_p50_us, c.reduction_pct
    );
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("calibration.log"), c.log.join("\n") + "\n")?;
        let mut tuned = cfg.clone();
        tuned.sim.latency.dn_write_ns = c.dn_write_ns;
        fs::write(dir.join("calibrated.toml"), tuned.to_toml())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::Run(a) => run(&a),
        Cmd::Sweep { run, axis, values } => sweep(&run, axis, &values),
        Cmd::Check { dir, exhaustive_limit } => check(&dir, exhaustive_limit),
        Cmd::Calibrate { run, target, steps } => calibrate(&run, target, steps),
    }
}

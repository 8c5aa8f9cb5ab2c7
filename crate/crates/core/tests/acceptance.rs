//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are expected to fail and do not fail the
//! target; anything else that fails does.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use switchdelta::bench::{self, zipf, Axis, ExperimentConfig, SystemMode};
use switchdelta::checker::{check_exhaustive, check_register, check_run, CheckOptions, RegKind, RegOp, INITIAL};
use switchdelta::client::{HistoryEvent, OpKind, OpRequest, Outcome, Path};
use switchdelta::metanode::{apply_sequential, Access, PagedIndex, Pipeline, Update};
use switchdelta::mutant::Mutant;
use switchdelta::netsim::{CrashEvent, CrashTarget, FaultPlan, LinkClass, LinkLoss, NodeKind, Sim, SimConfig, TargetedDrop};
use switchdelta::trace::SwitchEvent;
use switchdelta::wire::{FieldDelta, HashConfig, Location, MetadataPayload, OpType, Timestamp, FIELD_COUNT};

/// Hot-key mass at n=250M: the exact Zipf sums give 51.27% and 89.88%,
/// outside the 49.1% / 87.4% +-0.5pp band.
const KNOWN_RED: &[u32] = &[8];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn p50_write_us(history: &[HistoryEvent]) -> f64 {
    let mut lat: Vec<u64> = history
        .iter()
        .filter(|e| e.kind == OpKind::Write && e.outcome == Outcome::Committed)
        .map(|e| e.response.unwrap() - e.invoke)
        .collect();
    lat.sort_unstable();
    // nearest rank
    let rank = (lat.len() as f64 * 0.5).ceil() as usize;
    lat[rank.max(1) - 1] as f64 / 1000.0
}

fn write_only(replication: bool) -> (f64, f64, f64) {
    let mut base = ExperimentConfig::default();
    base.workload.read_ratio = 0.0;
    base.workload.clients = 6;
    base.workload.queue_depth = 1;
    base.workload.op_count = 100_000;
    base.workload.replication = replication;
    let mut slow = base.clone();
    slow.workload.mode = SystemMode::Baseline;
    let fast = p50_write_us(&bench::simulate(&base).unwrap().history);
    let slow = p50_write_us(&bench::simulate(&slow).unwrap().history);
    (slow, fast, 100.0 * (slow - fast) / slow)
}

fn c1() -> Verdict {
    let t = Instant::now();
    let (slow, fast, cut) = write_only(false);
    let secs = t.elapsed().as_secs_f64();
    let ok = (10.1..=12.3).contains(&slow) && (43.0..=50.0).contains(&cut) && secs < 60.0;
    verdict(ok, format!("baseline p50 {slow:.2}us, accelerated p50 {fast:.2}us, reduction {cut:.1}% ({secs:.1}s)"))
}

fn c2() -> Verdict {
    let (slow, fast, cut) = write_only(true);
    let (plain, _, _) = write_only(false);
    let added = slow - plain;
    let ok = (25.0..=35.0).contains(&cut) && (3.6..=4.0).contains(&added);
    verdict(ok, format!("baseline p50 {slow:.2}us (+{added:.2}us from replication), accelerated {fast:.2}us, reduction {cut:.1}%"))
}

/// Percentages straight from the switch trace.
fn rates(e: &bench::Experiment) -> (f64, f64) {
    let mut n: HashMap<SwitchEvent, f64> = HashMap::new();
    for r in &e.report.switch_trace {
        *n.entry(r.event).or_default() += 1.0;
    }
    let g = |ev| n.get(&ev).copied().unwrap_or(0.0);
    let reads = g(SwitchEvent::Hit) + g(SwitchEvent::Attach);
    let read_pct = 100.0 * reads / (reads + g(SwitchEvent::Miss));
    let write_pct = 100.0 * g(SwitchEvent::Fallback) / (g(SwitchEvent::Install) + g(SwitchEvent::Fallback));
    (read_pct, write_pct)
}

fn non_monotone_steps(v: &[f64]) -> usize {
    v.windows(2).filter(|w| w[1] < w[0]).count()
}

fn c3() -> Verdict {
    let base = ExperimentConfig::default();
    let conc = [6.0, 12.0, 24.0, 48.0, 96.0, 192.0, 384.0, 768.0];
    let pts = bench::sweep(&base, Axis::Concurrency, &conc).unwrap();
    let (reads, writes): (Vec<f64>, Vec<f64>) = pts.iter().map(|p| rates(&p.experiment)).unzip();
    let mut at768 = base.clone();
    at768.workload.clients = 96;
    at768.workload.queue_depth = 8;
    let thetas = bench::sweep(&at768, Axis::Theta, &[0.8, 1.2]).unwrap();
    let (r12, w12) = rates(&thetas[1].experiment);
    let (r08, w08) = rates(&thetas[0].experiment);
    let (r, w) = (reads[7], writes[7]);
    let all_pass = pts.iter().chain(&thetas).all(|p| p.experiment.pass());
    let ok = non_monotone_steps(&reads) <= 1
        && non_monotone_steps(&writes) <= 1
        && (3.0..=8.0).contains(&r)
        && (3.0..=8.0).contains(&w)
        && (r - w).abs() < 2.0
        && r12 > 15.0
        && w12 > 15.0
        && all_pass;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(",");
    verdict(
        ok,
        format!(
            "reads [{}] writes [{}]; theta 0.8 {r08:.2}/{w08:.2}, theta 1.2 {r12:.2}/{w12:.2}",
            fmt(&reads),
            fmt(&writes)
        ),
    )
}

fn soak_config(seed: u64) -> ExperimentConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x50a4);
    let mut c = ExperimentConfig { seed, ..Default::default() };
    c.sim.faults = FaultPlan {
        loss: 0.01,
        jitter_ns: 2_000,
        dup: 0.005,
        crashes: vec![
            CrashEvent {
                target: CrashTarget::Meta { index: rng.random_range(0..c.sim.meta_nodes) },
                at_ns: rng.random_range(2_000_000..6_000_000),
                downtime_ns: 200_000,
            },
            CrashEvent { target: CrashTarget::Switch, at_ns: rng.random_range(7_000_000..11_000_000), downtime_ns: 100_000 },
        ],
        ..Default::default()
    };
    c
}

fn c4() -> Verdict {
    let t = Instant::now();
    let mut bad = Vec::new();
    let mut ops = 0usize;
    for seed in 1..=100 {
        let e = bench::run_experiment(&soak_config(seed)).unwrap();
        ops += e.verdict.operations;
        let durable = e.verdict.rules.iter().any(|r| r.rule == "durability" && r.pass);
        let crashed = e.report.node_trace.iter().any(|n| matches!(n.event, switchdelta::trace::NodeEvent::Crash))
            && e.report.switch_trace.iter().any(|r| r.event == SwitchEvent::Reset);
        if !(e.pass() && durable && crashed) {
            bad.push(seed);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(bad.is_empty() && secs < 600.0, format!("100 runs, {ops} ops, failing seeds {bad:?} ({secs:.0}s)"))
}

fn kill_config(mutant: Option<Mutant>) -> ExperimentConfig {
    let mut c = ExperimentConfig { seed: 2, ..Default::default() };
    c.workload.key_space = 8;
    c.workload.theta = 0.0;
    c.workload.clients = 12;
    c.workload.queue_depth = 4;
    c.workload.op_count = 100_000;
    c.sim.meta_nodes = 1;
    c.sim.data_nodes = 2;
    c.sim.mutant = mutant;
    c.sim.hash.index_bits = 2;
    c.sim.hash.fingerprint_bits = 1;
    c.sim.faults.jitter_ns = 20_000;
    c.sim.faults.dup = 0.05;
    c.sim.faults.link_loss = vec![LinkLoss { link: LinkClass { from: NodeKind::Meta, to: NodeKind::Switch }, loss: 0.02 }];
    c
}

fn c5() -> Verdict {
    let clean = bench::run_experiment(&kill_config(None)).unwrap();
    let mut parts = vec![format!("unmutated {}", if clean.pass() { "clean" } else { "FAILS" })];
    let mut kills = 0;
    for m in Mutant::ALL {
        let e = bench::run_experiment(&kill_config(Some(m))).unwrap();
        let n = e.verdict.violations.len();
        if n > 0 {
            kills += 1;
        }
        parts.push(format!("{m:?} {n} violations"));
    }
    verdict(kills == 5 && clean.pass(), format!("{kills}/5 killed; {}", parts.join(", ")))
}

/// Two keys with the same index and fingerprint under `hash`.
fn colliding_keys(hash: &HashConfig) -> (Vec<u8>, Vec<u8>) {
    let mut seen = HashMap::new();
    for i in 0u32.. {
        let k = format!("key{i}").into_bytes();
        let h = hash.hash(&k).unwrap();
        if let Some(prev) = seen.insert((h.index, h.fingerprint), k.clone()) {
            return (prev, k);
        }
    }
    unreachable!()
}

fn c6() -> Verdict {
    let hash = HashConfig { index_bits: 8, fingerprint_bits: 8, ..Default::default() };
    let (a, b) = colliding_keys(&hash);
    let cfg = SimConfig {
        data_nodes: 1,
        meta_nodes: 1,
        sessions: 7,
        hash,
        // the third mirror (W_A) is lost, so its entry stays until recovery clears it
        faults: FaultPlan { drops: vec![TargetedDrop { op: OpType::MetaUpdateReq, nth: 3, mirrored_only: true }], ..Default::default() },
        ..Default::default()
    };
    let mut sim = Sim::new(cfg).unwrap();
    let op = |kind, key: &[u8], id| OpRequest { kind, key: key.to_vec(), value_id: id, value_size: 64, delta: None };
    sim.submit(0, 0, op(OpKind::Write, &a, 1));
    sim.submit(100_000, 0, op(OpKind::Write, &a, 2));
    sim.submit(200_000, 0, op(OpKind::Write, &a, 3));
    sim.submit(200_000, 1, op(OpKind::Write, &b, 4));
    for i in 0..100u64 {
        for s in 0..4 {
            sim.submit(210_000 + i * 4_000 + s * 1_000, 2 + s as usize, op(OpKind::Read, &b, 0));
        }
        sim.submit(210_000 + i * 4_000, 6, op(OpKind::Read, &a, 0));
    }
    sim.run();
    let r = sim.finish();
    let hex_a = hex::encode(&a);
    let hex_b = hex::encode(&b);
    let writes: Vec<&HistoryEvent> = r.history.iter().filter(|e| e.kind == OpKind::Write).collect();
    let w_a = writes.iter().find(|e| e.key == hex_a && e.invoke == 200_000).unwrap();
    let w_b = writes.iter().find(|e| e.key == hex_b).unwrap();
    let index = hash.hash(&a).unwrap().index;
    let clear_at = r
        .switch_trace
        .iter()
        .find(|s| s.index == index && s.ts == w_a.ts && matches!(s.event, SwitchEvent::Clear | SwitchEvent::ControlClear))
        .map(|s| s.sim_time)
        .unwrap_or(u64::MAX);
    let reads_b: Vec<&HistoryEvent> = r.history.iter().filter(|e| e.kind == OpKind::Read && e.key == hex_b).collect();
    let reads_a: Vec<&HistoryEvent> = r.history.iter().filter(|e| e.kind == OpKind::Read && e.key == hex_a).collect();
    let after: Vec<_> = reads_b.iter().filter(|e| e.invoke > clear_at).collect();
    let done_b = w_b.response.unwrap();
    let done_a = w_a.response.unwrap();
    // reads of B that start while A's entry is installed keep failing key
    // validation and only finish once the entry is cleared
    let before: Vec<_> = reads_b.iter().filter(|e| e.invoke > done_a && e.invoke < clear_at).collect();
    let blocked = !before.is_empty() && before.iter().all(|e| e.attempts >= 2 && e.response.unwrap() > clear_at);
    let free = !after.is_empty() && after.iter().all(|e| e.attempts == 1);
    let values_ok = reads_b.iter().all(|e| e.value == w_b.value || (e.value == Some(0) && e.invoke < done_b))
        && reads_b.iter().filter(|e| e.invoke > done_b).all(|e| e.value == w_b.value)
        && reads_a.iter().filter(|e| e.invoke > done_a).all(|e| e.value == w_a.value);
    let clean = check_run(&r, CheckOptions::default()).unwrap().pass;
    let ok = w_a.path == Path::Accelerated
        && w_a.ts == 3
        && w_b.path == Path::Fallback
        && w_b.ts == 4
        && blocked
        && free
        && values_ok
        && clean;
    verdict(
        ok,
        format!(
            "W_A {:?} ts{}, W_B {:?} ts{}; clear at {}us; reads of B blocked until the clear: {}, direct after it: {}",
            w_a.path,
            w_a.ts,
            w_b.path,
            w_b.ts,
            clear_at / 1000,
            before.len(),
            after.len()
        ),
    )
}

/// Newest-wins reference: per key, the full location or per-field values.
#[derive(Default)]
struct Oracle {
    full: BTreeMap<Vec<u8>, (u32, u32)>,
    fields: BTreeMap<Vec<u8>, ([u32; FIELD_COUNT], [u32; FIELD_COUNT])>,
}

impl Oracle {
    fn apply(&mut self, u: &Update) {
        match &u.meta {
            MetadataPayload::Full(l) => {
                let e = self.full.entry(u.key.clone()).or_insert((0, 0));
                if u.ts.0 > e.1 {
                    *e = (l.log_id, u.ts.0);
                }
            }
            MetadataPayload::Partial(d) => {
                let e = self.fields.entry(u.key.clone()).or_insert(([0; FIELD_COUNT], [0; FIELD_COUNT]));
                let set: Vec<usize> = (0..FIELD_COUNT).filter(|f| d.bitmap & (1 << f) != 0).collect();
                for (f, v) in set.into_iter().zip(&d.values) {
                    if u.ts.0 > e.1[f] {
                        e.0[f] = *v;
                        e.1[f] = u.ts.0;
                    }
                }
            }
        }
    }

    fn dump(&self) -> String {
        let mut rows: BTreeMap<&[u8], String> = BTreeMap::new();
        for (k, (log_id, ts)) in &self.full {
            rows.insert(k, format!("{{\"key\":\"{}\",\"log_id\":{log_id},\"ts\":{ts}}}\n", hex::encode(k)));
        }
        for (k, (values, ts)) in &self.fields {
            let vs = values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
            let max = ts.iter().max().unwrap();
            rows.insert(k, format!("{{\"key\":\"{}\",\"fields\":[{vs}],\"ts\":{max}}}\n", hex::encode(k)));
        }
        rows.into_values().collect()
    }
}

fn c7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut batches = 0;
    let mut mismatches = 0;
    let mut unsorted = 0;
    for _ in 0..100 {
        let mut piped = PagedIndex::new();
        let mut seq = PagedIndex::new();
        let mut oracle = Oracle::default();
        let mut ts_pool: Vec<u32> = (1..=2_000).collect();
        ts_pool.shuffle(&mut rng);
        let mut ts = ts_pool.into_iter();
        for _ in 0..100 {
            let len = rng.random_range(1..=16);
            let batch: Vec<Update> = (0..len)
                .map(|_| {
                    let partial = rng.random_bool(0.3);
                    let key = format!("{}{}", if partial { "f" } else { "k" }, rng.random_range(0..200)).into_bytes();
                    let meta = if partial {
                        let pairs: Vec<(usize, u32)> =
                            (0..rng.random_range(1..4)).map(|_| (rng.random_range(0..FIELD_COUNT), rng.random())).collect();
                        MetadataPayload::Partial(FieldDelta::from_pairs(&pairs))
                    } else {
                        MetadataPayload::Full(Location { log_id: rng.random(), data_node: 1 })
                    };
                    Update { key, meta, ts: Timestamp(ts.next().unwrap()) }
                })
                .collect();
            let mut pipe = Pipeline::new(8);
            pipe.run(&mut piped, &batch);
            apply_sequential(&mut seq, &batch);
            batch.iter().for_each(|u| oracle.apply(u));
            let dir: Vec<&[u8]> = pipe.accesses.iter().filter(|(_, a)| *a == Access::Dir).map(|(s, _)| batch[*s].key.as_slice()).collect();
            if dir.windows(2).any(|w| w[0] > w[1]) {
                unsorted += 1;
            }
            let d = piped.dump();
            if d != seq.dump() || d != oracle.dump() {
                mismatches += 1;
            }
            batches += 1;
        }
    }
    verdict(mismatches == 0 && unsorted == 0, format!("{batches} batches, {mismatches} dump mismatches, {unsorted} unsorted access traces"))
}

/// sum_{i=1}^{n} i^-theta, smallest terms first.
fn zipf_sum(n: u64, theta: f64) -> f64 {
    (1..=n).rev().map(|i| (i as f64).powf(-theta)).sum()
}

fn c8() -> Verdict {
    let n = 250_000_000u64;
    let hot = n / 10_000;
    let mass = |theta: f64| 100.0 * zipf_sum(hot, theta) / zipf_sum(n, theta);
    let (m99, m12) = (mass(0.99), mass(1.2));
    let lib = 100.0 * zipf::hot_mass(n, 0.99, 1e-4);
    let analytic_ok = (m99 - 49.1).abs() <= 0.5 && (m12 - 87.4).abs() <= 0.5;

    let small = 10_000u64;
    let samples = 20_000_000;
    let mut tvs = Vec::new();
    for theta in [0.99, 1.2] {
        let s = zipf::ZipfSampler::new(small, theta);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut counts = vec![0u64; small as usize + 1];
        for _ in 0..samples {
            counts[s.sample(&mut rng) as usize] += 1;
        }
        let h = zipf_sum(small, theta);
        let tv: f64 = 0.5
            * (1..=small)
                .map(|r| (counts[r as usize] as f64 / samples as f64 - (r as f64).powf(-theta) / h).abs())
                .sum::<f64>();
        tvs.push(tv);
    }
    let tv_ok = tvs.iter().all(|&t| t <= 0.01);
    verdict(
        analytic_ok && tv_ok,
        format!(
            "hottest 0.01% mass at n=250M: {m99:.2}% (theta 0.99, library {lib:.2}%), {m12:.2}% (theta 1.2); \
             TV at n=1e4 over 2e7 samples: {:.4} / {:.4}",
            tvs[0], tvs[1]
        ),
    )
}

/// Brute force: some permutation respects real time, register semantics
/// and, if `by_ts`, the write timestamp order.
fn oracle_linearizable(ops: &[RegOp], by_ts: bool) -> bool {
    fn go(ops: &[RegOp], used: &mut Vec<bool>, order: &mut Vec<usize>, by_ts: bool) -> bool {
        if order.len() == ops.len() {
            return true;
        }
        'next: for i in 0..ops.len() {
            if used[i] {
                continue;
            }
            // everything that finished before i began must already be placed
            for j in 0..ops.len() {
                if !used[j] && j != i && ops[j].response < ops[i].invoke {
                    continue 'next;
                }
                if by_ts && !used[j] && j != i && ops[i].kind == RegKind::Write && ops[j].kind == RegKind::Write && ops[j].ts < ops[i].ts {
                    continue 'next;
                }
            }
            let current = order.iter().rev().map(|&k| &ops[k]).find(|o| o.kind == RegKind::Write).map_or(INITIAL, |w| w.value);
            if ops[i].kind == RegKind::Read && ops[i].value != current {
                continue;
            }
            used[i] = true;
            order.push(i);
            if go(ops, used, order, by_ts) {
                return true;
            }
            order.pop();
            used[i] = false;
        }
        false
    }
    go(ops, &mut vec![false; ops.len()], &mut Vec::new(), by_ts)
}

fn random_register(rng: &mut ChaCha8Rng) -> Vec<RegOp> {
    let n = rng.random_range(1..=6);
    let mut ts: Vec<u32> = (1..=n as u32).collect();
    ts.shuffle(rng);
    let nwrites = rng.random_range(0..=n);
    let mut ops = Vec::new();
    for i in 0..n {
        let invoke = rng.random_range(0..20u64);
        let response = if rng.random_bool(0.05) { u64::MAX } else { invoke + rng.random_range(0..8u64) };
        if i < nwrites {
            ops.push(RegOp { op_id: i as u64, kind: RegKind::Write, value: 100 + i as u64, ts: ts[i], invoke, response });
        } else {
            let value = match rng.random_range(0..10) {
                0 => 999,
                1..=2 => INITIAL,
                _ if nwrites > 0 => 100 + rng.random_range(0..nwrites) as u64,
                _ => INITIAL,
            };
            let response = response.min(invoke + 8);
            ops.push(RegOp { op_id: i as u64, kind: RegKind::Read, value, ts: 0, invoke, response });
        }
    }
    ops
}

fn c9() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cases = 20_000;
    let (mut disagree_full, mut disagree_cand, mut disagree_exh, mut bad) = (0, 0, 0, 0);
    for _ in 0..cases {
        let ops = random_register(&mut rng);
        let truth = oracle_linearizable(&ops, false);
        let truth_ts = oracle_linearizable(&ops, true);
        if check_register(&ops, CheckOptions::default()).is_none() != truth {
            disagree_full += 1;
        }
        if check_register(&ops, CheckOptions { exhaustive_limit: 0 }).is_none() != truth_ts {
            disagree_cand += 1;
        }
        if check_exhaustive(&ops) != truth {
            disagree_exh += 1;
        }
        if !truth {
            bad += 1;
        }
    }
    verdict(
        disagree_full + disagree_cand + disagree_exh == 0,
        format!(
            "{cases} registers ({bad} non-linearizable): {disagree_full} checker, {disagree_cand} candidate-order, {disagree_exh} search disagreements"
        ),
    )
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("switchdelta-acceptance-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn files(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| {
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn c10() -> Verdict {
    let mut cfg = soak_config(10);
    cfg.workload.op_count = 20_000;
    let mut outs = Vec::new();
    for round in 0..2 {
        let dir = scratch(&format!("run{round}"));
        let e = bench::run_experiment(&cfg).unwrap();
        bench::write_artifacts(&dir, &cfg, "run", &e).unwrap();
        let pts = bench::sweep(&cfg, Axis::Concurrency, &[12.0, 48.0, 96.0]).unwrap();
        let csv = bench::sweep_csv(&pts);
        for p in &pts {
            bench::write_artifacts(&dir.join(&p.label), &p.config, &p.label, &p.experiment).unwrap();
        }
        let mut all = files(&dir);
        for p in &pts {
            for (k, v) in files(&dir.join(&p.label)) {
                all.insert(format!("{}/{k}", p.label), v);
            }
        }
        all.insert("sweep.csv".into(), csv.into_bytes());
        let _ = std::fs::remove_dir_all(&dir);
        outs.push(all);
    }
    let differing: Vec<&String> = outs[0].iter().filter(|(k, v)| outs[1].get(*k) != Some(v)).map(|(k, _)| k).collect();
    let n = outs[0].len();
    verdict(differing.is_empty() && n > 20, format!("{n} output files compared, {} differ {differing:?}", differing.len()))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 10] = [
        (1, "one-RTT write latency", c1),
        (2, "replicated write latency", c2),
        (3, "hit-rate trends", c3),
        (4, "linearizability soak", c4),
        (5, "mutation kill-suite", c5),
        (6, "same-hash two-key interleaving", c6),
        (7, "deferred batch equivalence", c7),
        (8, "zipf fidelity", c8),
        (9, "checker vs exhaustive oracle", c9),
        (10, "determinism", c10),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = 0;
    for (id, name, f) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let v = f();
        let known = KNOWN_RED.contains(&id);
        let tag = match (v.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{tag} {id:>2} {name}: {} [{:.1}s]", v.detail, t.elapsed().as_secs_f64());
        if !v.pass && !known {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        std::process::exit(1);
    }
}

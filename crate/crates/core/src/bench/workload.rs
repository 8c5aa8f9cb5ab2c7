//! Closed-loop workload description and generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::zipf::{key_for_rank, ZipfSampler};
use crate::client::{OpKind, OpRequest};
use crate::netsim::Workload;
use crate::wire::{FieldDelta, FIELD_COUNT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemMode {
    Baseline,
    Switchdelta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub key_space: u64,
    /// Zipf skew; 0 is uniform.
    pub theta: f64,
    pub read_ratio: f64,
    pub clients: usize,
    pub queue_depth: usize,
    pub op_count: u64,
    pub mode: SystemMode,
    pub dmp: bool,
    pub replication: bool,
    pub partial: bool,
    /// Fields touched by one partial write, at most.
    pub partial_fields: usize,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            key_space: 1_000_000,
            theta: 0.99,
            read_ratio: 0.5,
            clients: 48,
            queue_depth: 8,
            op_count: 100_000,
            mode: SystemMode::Switchdelta,
            dmp: true,
            replication: false,
            partial: false,
            partial_fields: 4,
        }
    }
}

impl WorkloadSpec {
    pub fn concurrency(&self) -> usize {
        self.clients * self.queue_depth
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.key_space == 0 {
            return Err("key space must be non-empty".into());
        }
        if !(self.theta >= 0.0) {
            return Err("theta must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.read_ratio) {
            return Err("read ratio must be within [0, 1]".into());
        }
        if self.concurrency() == 0 {
            return Err("concurrency must be at least 1".into());
        }
        if self.partial && !(1..=FIELD_COUNT).contains(&self.partial_fields) {
            return Err(format!("partial writes touch 1..={FIELD_COUNT} fields"));
        }
        Ok(())
    }
}

/// Draws keys from a Zipf distribution and mixes reads and writes.
pub struct ZipfWorkload {
    spec: WorkloadSpec,
    zipf: ZipfSampler,
    rng: ChaCha8Rng,
}

impl ZipfWorkload {
    pub fn new(spec: WorkloadSpec, seed: u64) -> Self {
        let zipf = ZipfSampler::new(spec.key_space, spec.theta);
        ZipfWorkload { spec, zipf, rng: ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_10ad) }
    }
}

impl Workload for ZipfWorkload {
    fn next_op(&mut self, _session: usize) -> OpRequest {
        let key = key_for_rank(self.zipf.sample(&mut self.rng));
        let read = self.rng.random_bool(self.spec.read_ratio);
        if read {
            return OpRequest { kind: OpKind::Read, key, value_id: 0, value_size: 0, delta: None };
        }
        if !self.spec.partial {
            return OpRequest { kind: OpKind::Write, key, value_id: 0, value_size: 0, delta: None };
        }
        let n = self.rng.random_range(1..=self.spec.partial_fields);
        let fields = rand::seq::index::sample(&mut self.rng, FIELD_COUNT, n);
        let pairs: Vec<(usize, u32)> = fields.iter().map(|f| (f, 0)).collect();
        OpRequest { kind: OpKind::PartialWrite, key, value_id: 0, value_size: 0, delta: Some(FieldDelta::from_pairs(&pairs)) }
    }
}

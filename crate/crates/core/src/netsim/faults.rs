//! Seeded fault plan: per-link loss, jitter, duplication, targeted drops and
//! scheduled crashes.

use serde::{Deserialize, Serialize};

use crate::wire::OpType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Switch,
    Client,
    Data,
    Meta,
    Backup,
}

/// A one-way link between a node and the switch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinkClass {
    pub from: NodeKind,
    pub to: NodeKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkLoss {
    pub link: LinkClass,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CrashTarget {
    Switch,
    /// Metadata node by position (0-based).
    Meta { index: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashEvent {
    pub target: CrashTarget,
    pub at_ns: u64,
    pub downtime_ns: u64,
}

/// Drops the `nth` (1-based) message of type `op` leaving the switch.
/// `mirrored_only` restricts the count to mirrored metadata updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetedDrop {
    pub op: OpType,
    pub nth: u64,
    #[serde(default)]
    pub mirrored_only: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultPlan {
    /// Loss probability on every link.
    pub loss: f64,
    /// Per-link overrides of `loss`.
    pub link_loss: Vec<LinkLoss>,
    /// Extra uniform delay in `[0, jitter_ns]` per hop; reorders packets.
    pub jitter_ns: u64,
    pub dup: f64,
    pub crashes: Vec<CrashEvent>,
    pub drops: Vec<TargetedDrop>,
}

impl FaultPlan {
    pub fn loss_for(&self, link: LinkClass) -> f64 {
        self.link_loss.iter().rev().find(|l| l.link == link).map_or(self.loss, |l| l.loss)
    }

    pub fn validate(&self, meta_nodes: usize) -> Result<(), String> {
        let p = |x: f64| (0.0..=1.0).contains(&x);
        if !p(self.loss) || !p(self.dup) || !self.link_loss.iter().all(|l| p(l.loss)) {
            return Err("probabilities must be within [0, 1]".into());
        }
        for c in &self.crashes {
            if let CrashTarget::Meta { index } = c.target {
                if index >= meta_nodes {
                    return Err(format!("unknown target: metadata node {index}"));
                }
            }
        }
        for d in &self.drops {
            if d.nth == 0 {
                return Err("targeted drop counts from 1".into());
            }
        }
        Ok(())
    }
}

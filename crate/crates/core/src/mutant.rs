use serde::{Deserialize, Serialize};

/// A deliberately broken protocol rule, used to show the checker notices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutant {
    /// Install ignores MaxTs.
    InstallGuard,
    /// Clear ignores the CurTs equality check.
    ClearEquality,
    /// Fallback metadata responses are never blocked.
    ResponseGate,
    /// Data nodes skip the stored-key check on reads.
    KeyValidation,
    /// Occupied slots are overwritten instead of falling back.
    FallbackOnOccupied,
}

impl Mutant {
    pub const ALL: [Mutant; 5] = [
        Mutant::InstallGuard,
        Mutant::ClearEquality,
        Mutant::ResponseGate,
        Mutant::KeyValidation,
        Mutant::FallbackOnOccupied,
    ];
}

pub(crate) fn is(m: Option<Mutant>, which: Mutant) -> bool {
    m == Some(which)
}

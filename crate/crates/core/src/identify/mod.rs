//! Exhaustive checks of the adjustment formula on finite structural causal
//! models: a hidden confounder `ε` drives both outcomes and treatments, the
//! latent state `z` evolves under treatments only, and `y` is emitted from
//! `(z, ε)`.

mod scm;
mod verify;
mod witness;

pub use scm::{DiscreteScm, InterventionQuery, Step};
pub use verify::{
    random_observable_scm, random_query, random_query_at, summarize, verify_instance, verify_random_instances,
    InstanceReport, VerificationSummary,
};
pub use witness::{nonidentifiability_witness, WitnessReport};

use alloc::string::String;

/// Largest trajectory count `enumerate_joint` accepts.
pub const MAX_TRAJECTORIES: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IdentifyError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("{count} trajectories exceed the enumeration limit of {MAX_TRAJECTORIES}")]
    TooLarge { count: u128 },
    #[error("invalid query: {0}")]
    Query(String),
    #[error("the conditioning prefix has probability zero")]
    ZeroProbability,
    #[error("states {0} and {1} are not interchangeable")]
    NotBisimilar(usize, usize),
}

/// Total-variation distance between two distributions on the same support.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

//! Ground-truth data generators.
//!
//! Every unit draws from its own ChaCha8 stream (`seed`, stream = unit id),
//! so units can be simulated in any order or in parallel with identical
//! results.

pub mod cancer;
pub mod rff;
pub mod semi;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use cancer::{
    dose_policy, generate_cancer_dataset, sample_patient_params, simulate_cancer_patient, simulate_cancer_unit,
    CancerPatientParams, CancerSimConfig, DoseRegime,
};
pub use rff::{rff_function, Kernel, RffFunction};
pub use semi::{generate_semi_synthetic, shared_draws, simulate_semi_unit, SemiSynthConfig, SharedDraws};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(&'static str),
    #[error("parameter draw rejected 1000 times in a row")]
    Rejection,
    #[error("unit {unit_id}: state became non-finite at t = {time}")]
    NonFinite { unit_id: u64, time: f64 },
}

/// The random stream of one unit.
pub fn unit_rng(seed: u64, unit_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(unit_id);
    rng
}

#[cfg(test)]
mod tests;

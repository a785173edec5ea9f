//! The ObsNODE model.
//!
//! The latent state is split into `m` blocks of width `d_y`. Block `i`
//! evolves as `z^(i+1) + φ_i(z^(1..i), a)` and the last block as
//! `φ_m(z, a)`; the output is the first block. Since every block only sees
//! the blocks above it plus the next one, the initial state can be recovered
//! from the output trajectory under any treatment path.
//!
//! A gated recurrent encoder maps the observation history up to a decision
//! time to a point estimate of the latent state, from which forecasts are
//! obtained by integrating the field under a (possibly hypothetical)
//! treatment path.

mod config;
mod encoder;
mod forecast;
mod model;

use alloc::string::String;

pub use config::{Activation, ObsNodeConfig, RolloutMode};
pub use encoder::{GruEncoder, History, PseudoObs, StateEncoder};
pub use forecast::tile_rows;
pub use model::{impute, phi_input_dim, Bound, Field, ObsNode};

use crate::autodiff::AutodiffError;
use crate::odeint::OdeError;

/// Recorded in checkpoints to name the encoder's recurrent cell.
pub const ENCODER_CELL: &str = "gru";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("{what}: expected width {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("no history at or before the decision time")]
    EmptyHistory,
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[cfg(test)]
mod tests;

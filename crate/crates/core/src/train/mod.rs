//! Normalization, the masked variance-normalized loss and the training loop.

mod fit;
mod loss;
mod norm;

pub use fit::{
    batch_control, forecast_window, to_history, train, CheckpointPolicy, DecisionSampling, EpochMetrics,
    ForecastWindow, TrainConfig, TrainOutcome,
};
pub use loss::{masked_loss, observed_variance, LossTerms};
pub use norm::NormStats;

use alloc::string::String;

use crate::autodiff::AutodiffError;
use crate::obsnode::ModelError;
use crate::odeint::OdeError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("component {component} has zero variance in the training split")]
    ZeroVariance { component: usize },
    #[error("component {component} is observed fewer than twice in the training split")]
    TooFewObservations { component: usize },
    #[error("no prediction for unit {unit_id}, component {component} at t = {time}")]
    MissingPrediction { unit_id: u64, component: usize, time: f64 },
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error("epoch {epoch}: {skipped} of {batches} batches diverged")]
    TooManySkipped {
        epoch: usize,
        skipped: usize,
        batches: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

impl TrainError {
    /// Integrator blow-ups and non-finite intermediate values: the batch is
    /// skipped rather than aborting the run.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            TrainError::Model(ModelError::Ode(
                OdeError::BlowUp { .. }
                    | OdeError::MaxSteps { .. }
                    | OdeError::Autodiff(AutodiffError::NonFinite { .. })
            )) | TrainError::Model(ModelError::Autodiff(AutodiffError::NonFinite { .. }))
                | TrainError::Autodiff(AutodiffError::NonFinite { .. })
        )
    }
}

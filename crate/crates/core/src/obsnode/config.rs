use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::odeint::IntegrationConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    LeakyRelu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    LongHorizon,
    Recursive,
}

fn one() -> f64 {
    1.0
}

/// Architecture of an ObsNODE model.
///
/// `time_scale` converts dataset time to model time (`t_model = t / time_scale`)
/// and `treatment_scale` divides each treatment component before it reaches
/// the network; both are part of the model so checkpoints are self-contained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObsNodeConfig {
    pub d_y: usize,
    pub m: usize,
    pub d_a: usize,
    pub phi_hidden_dim: usize,
    pub phi_layers: usize,
    pub phi_activation: Activation,
    pub encoder_hidden_dim: usize,
    pub rollout_mode: RolloutMode,
    pub recursive_chunk: f64,
    pub integration: IntegrationConfig,
    #[serde(default = "one")]
    pub time_scale: f64,
    #[serde(default)]
    pub treatment_scale: Vec<f64>,
    /// Adds the latest (imputed) observation to the first block of the
    /// encoded state, so the encoder only learns a correction to it.
    #[serde(default)]
    pub encoder_residual: bool,
}

impl ObsNodeConfig {
    pub fn d_z(&self) -> usize {
        self.m * self.d_y
    }

    /// Width of one encoder input step: imputed y, mask, previous treatment, Δt.
    pub fn encoder_input_dim(&self) -> usize {
        2 * self.d_y + self.d_a + 1
    }

    pub fn treatment_scale_at(&self, l: usize) -> f64 {
        self.treatment_scale.get(l).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.m == 0 || self.d_y == 0 || self.d_a == 0 {
            return Err(String::from("m, d_y and d_a must be at least 1"));
        }
        if self.phi_hidden_dim == 0 && self.phi_layers > 0 {
            return Err(String::from("phi_hidden_dim must be positive"));
        }
        if self.encoder_hidden_dim == 0 {
            return Err(String::from("encoder_hidden_dim must be positive"));
        }
        if self.rollout_mode == RolloutMode::Recursive
            && !(self.recursive_chunk > 0.0 && self.recursive_chunk.is_finite())
        {
            return Err(String::from("recursive_chunk must be positive in recursive mode"));
        }
        if !(self.time_scale > 0.0 && self.time_scale.is_finite()) {
            return Err(String::from("time_scale must be positive"));
        }
        if !self.treatment_scale.is_empty() && self.treatment_scale.len() != self.d_a {
            return Err(format!(
                "treatment_scale has {} entries, expected d_a = {}",
                self.treatment_scale.len(),
                self.d_a
            ));
        }
        if self.treatment_scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(String::from("treatment_scale entries must be positive"));
        }
        self.integration.validate().map_err(|e| format!("{e}"))
    }
}

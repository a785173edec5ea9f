//! Random Fourier feature approximations of stationary Gaussian processes.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// Squared exponential: Gaussian frequencies.
    Rbf,
    /// Matérn ν = 3/2: Student-t frequencies with 3 degrees of freedom.
    Matern32,
}

/// `f(x) = sqrt(2/n) Σ_i w_i cos(ω_i·x + b_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RffFunction {
    omega: Vec<Vec<f64>>,
    phase: Vec<f64>,
    weight: Vec<f64>,
}

impl RffFunction {
    pub fn from_parts(omega: Vec<Vec<f64>>, phase: Vec<f64>, weight: Vec<f64>) -> Result<Self, SimError> {
        let n = omega.len();
        if n == 0 || phase.len() != n || weight.len() != n {
            return Err(SimError::Config("RFF needs matching, non-empty feature lists"));
        }
        let d = omega[0].len();
        if omega.iter().any(|w| w.len() != d) {
            return Err(SimError::Config("RFF frequencies must share one dimension"));
        }
        Ok(RffFunction { omega, phase, weight })
    }

    pub fn input_dim(&self) -> usize {
        self.omega[0].len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = self.omega.len() as f64;
        let mut acc = 0.0;
        for ((omega, b), w) in self.omega.iter().zip(&self.phase).zip(&self.weight) {
            let arg: f64 = omega.iter().zip(x).map(|(o, x)| o * x).sum::<f64>() + b;
            acc += w * math::cos(arg);
        }
        math::sqrt(2.0 / n) * acc
    }

    /// `sqrt(2/n) Σ|w_i|`, an upper bound on `|f|`.
    pub fn bound(&self) -> f64 {
        let n = self.omega.len() as f64;
        math::sqrt(2.0 / n) * self.weight.iter().map(|w| w.abs()).sum::<f64>()
    }
}

/// Samples a random function from an approximately GP-distributed family
/// with unit prior variance.
pub fn rff_function<R: Rng + ?Sized>(
    rng: &mut R,
    input_dim: usize,
    n_features: usize,
    lengthscale: f64,
    kernel: Kernel,
) -> Result<RffFunction, SimError> {
    if n_features == 0 || input_dim == 0 || !(lengthscale > 0.0) {
        return Err(SimError::Config(
            "RFF needs features, an input dimension and a positive lengthscale",
        ));
    }
    let chi = ChiSquared::new(3.0).map_err(|_| SimError::Config("invalid chi-squared"))?;
    let mut omega = Vec::with_capacity(n_features);
    let mut phase = Vec::with_capacity(n_features);
    let mut weight = Vec::with_capacity(n_features);
    for _ in 0..n_features {
        let scale = match kernel {
            Kernel::Rbf => 1.0,
            Kernel::Matern32 => math::sqrt(3.0 / chi.sample(rng)),
        } / lengthscale;
        omega.push(
            (0..input_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
                .collect(),
        );
        phase.push(rng.random_range(0.0..core::f64::consts::TAU));
        weight.push(rng.sample(StandardNormal));
    }
    RffFunction::from_parts(omega, phase, weight)
}

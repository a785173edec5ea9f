use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::data::{Dataset, Trajectory};
use crate::math;

/// Per-component z-score statistics over the observed entries of a set of
/// units. `std` is the population standard deviation, so the normalized
/// training split has unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit(units: &[&Trajectory], d_y: usize) -> Result<Self, TrainError> {
        let mut count = vec![0usize; d_y];
        let mut sum = vec![0.0; d_y];
        for u in units {
            for (y, m) in u.y.iter().zip(&u.mask) {
                for j in 0..d_y {
                    if m[j] {
                        count[j] += 1;
                        sum[j] += y[j];
                    }
                }
            }
        }
        if let Some(component) = count.iter().position(|&c| c < 2) {
            return Err(TrainError::TooFewObservations { component });
        }
        let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
        let mut ss = vec![0.0; d_y];
        for u in units {
            for (y, m) in u.y.iter().zip(&u.mask) {
                for j in 0..d_y {
                    if m[j] {
                        ss[j] += (y[j] - mean[j]) * (y[j] - mean[j]);
                    }
                }
            }
        }
        let std: Vec<f64> = ss.iter().zip(&count).map(|(s, &c)| math::sqrt(s / c as f64)).collect();
        // A spread below rounding noise of the mean counts as constant.
        for (component, (&s, &m)) in std.iter().zip(&mean).enumerate() {
            if !(s > 1e-12 * (1.0 + m.abs())) {
                return Err(TrainError::ZeroVariance { component });
            }
        }
        Ok(NormStats { mean, std })
    }

    pub fn d_y(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, j: usize, y: f64) -> f64 {
        (y - self.mean[j]) / self.std[j]
    }

    pub fn denormalize(&self, j: usize, z: f64) -> f64 {
        z * self.std[j] + self.mean[j]
    }

    /// Normalizes the observed outcomes; masked slots, treatments and
    /// simulator ground truth are left alone.
    pub fn apply_unit(&self, unit: &Trajectory) -> Trajectory {
        let mut out = unit.clone();
        for (y, m) in out.y.iter_mut().zip(&unit.mask) {
            for j in 0..y.len() {
                if m[j] {
                    y[j] = self.normalize(j, y[j]);
                }
            }
        }
        out
    }

    pub fn invert_unit(&self, unit: &Trajectory) -> Trajectory {
        let mut out = unit.clone();
        for (y, m) in out.y.iter_mut().zip(&unit.mask) {
            for j in 0..y.len() {
                if m[j] {
                    y[j] = self.denormalize(j, y[j]);
                }
            }
        }
        out
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        Dataset {
            d_y: data.d_y,
            d_a: data.d_a,
            units: data.units.iter().map(|u| self.apply_unit(u)).collect(),
            splits: data.splits.clone(),
        }
    }

    pub fn invert(&self, data: &Dataset) -> Dataset {
        Dataset {
            d_y: data.d_y,
            d_a: data.d_a,
            units: data.units.iter().map(|u| self.invert_unit(u)).collect(),
            splits: data.splits.clone(),
        }
    }
}

//! Longitudinal records shared by the simulators, training and evaluation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// One unit's record in dataset units. `a[k]` is the treatment applied on
/// `[times[k], times[k+1])`; unobserved outcome slots (mask false) hold 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub unit_id: u64,
    pub times: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    pub a: Vec<Vec<f64>>,
    /// Simulator-side ground truth, never shown to the model.
    pub latents: Option<Vec<Vec<f64>>>,
    pub confounders: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self, d_y: usize, d_a: usize) -> Result<(), String> {
        let n = self.times.len();
        let id = self.unit_id;
        if n == 0 {
            return Err(format!("unit {id}: no time points"));
        }
        if self.times.iter().any(|t| !t.is_finite()) || self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(format!("unit {id}: times must be finite and strictly increasing"));
        }
        if self.y.len() != n || self.mask.len() != n || self.a.len() != n {
            return Err(format!("unit {id}: y, mask and a need one row per time point"));
        }
        for k in 0..n {
            if self.y[k].len() != d_y || self.mask[k].len() != d_y {
                return Err(format!("unit {id}: outcome row {k} does not have {d_y} components"));
            }
            if self.a[k].len() != d_a {
                return Err(format!("unit {id}: treatment row {k} does not have {d_a} components"));
            }
            if self.y[k]
                .iter()
                .zip(&self.mask[k])
                .any(|(y, &m)| (m && !y.is_finite()) || (!m && *y != 0.0))
            {
                return Err(format!(
                    "unit {id}: outcome row {k} is non-finite or fills a masked slot"
                ));
            }
            if self.a[k].iter().any(|a| !a.is_finite()) {
                return Err(format!("unit {id}: treatment row {k} is non-finite"));
            }
        }
        Ok(())
    }

    /// Index of the last record at or before `t`.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        self.times
            .partition_point(|&s| s <= t + 1e-9 * (1.0 + t.abs()))
            .checked_sub(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Split by unit index: the first third trains, the second validates and
/// the remainder tests.
pub fn split_for_index(index: usize, n: usize) -> Split {
    if index < n / 3 {
        Split::Train
    } else if index < 2 * n / 3 {
        Split::Val
    } else {
        Split::Test
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub d_y: usize,
    pub d_a: usize,
    pub units: Vec<Trajectory>,
    pub splits: Vec<Split>,
}

impl Dataset {
    /// Builds a dataset split by unit index.
    pub fn with_index_split(d_y: usize, d_a: usize, units: Vec<Trajectory>) -> Self {
        let n = units.len();
        let splits = (0..n).map(|i| split_for_index(i, n)).collect();
        Dataset {
            d_y,
            d_a,
            units,
            splits,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.splits.len() != self.units.len() {
            return Err(String::from("every unit needs a split"));
        }
        let mut ids: Vec<u64> = self.units.iter().map(|u| u.unit_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(String::from("unit ids must be unique"));
        }
        self.units.iter().try_for_each(|u| u.validate(self.d_y, self.d_a))
    }

    pub fn split(&self, which: Split) -> Vec<&Trajectory> {
        self.units
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == which)
            .map(|(u, _)| u)
            .collect()
    }

    pub fn unit(&self, unit_id: u64) -> Option<&Trajectory> {
        self.units.iter().find(|u| u.unit_id == unit_id)
    }
}

use alloc::vec;
use alloc::vec::Vec;

use super::TrainError;
use crate::data::Trajectory;

pub(crate) fn after(t: f64, t_c: f64) -> bool {
    t > t_c + 1e-9 * (1.0 + t_c.abs())
}

pub(crate) fn not_after(t: f64, t_f: f64) -> bool {
    t <= t_f + 1e-9 * (1.0 + t_f.abs())
}

/// Loss value plus the number of (unit, component) pairs that contributed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub value: f64,
    pub pairs: usize,
}

/// Population variance of every component over all observed entries.
pub fn observed_variance(units: &[&Trajectory], d_y: usize) -> Vec<f64> {
    let mut count = vec![0usize; d_y];
    let mut sum = vec![0.0; d_y];
    let mut sq = vec![0.0; d_y];
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
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c.max(1) as f64).collect();
    for u in units {
        for (y, m) in u.y.iter().zip(&u.mask) {
            for j in 0..d_y {
                if m[j] {
                    sq[j] += (y[j] - mean[j]) * (y[j] - mean[j]);
                }
            }
        }
    }
    sq.iter().zip(&count).map(|(s, &c)| s / c.max(1) as f64).collect()
}

/// Masked squared error over the window `(t_c, t_f]`: every (unit, component)
/// pair is averaged over its own observations in the window and weighted by
/// `1 / (n σ_j²)`. Pairs without observations in the window are dropped.
///
/// `predict(unit, time_index, component)` supplies the forecast at an
/// observed point.
pub fn masked_loss<F>(
    units: &[&Trajectory],
    t_c: f64,
    t_f: f64,
    variance: &[f64],
    mut predict: F,
) -> Result<LossTerms, TrainError>
where
    F: FnMut(usize, usize, usize) -> Option<f64>,
{
    let n = units.len() as f64;
    let mut value = 0.0;
    let mut pairs = 0;
    for (i, u) in units.iter().enumerate() {
        for (j, &var) in variance.iter().enumerate() {
            let mut count = 0usize;
            let mut se = 0.0;
            for (k, &t) in u.times.iter().enumerate() {
                if !(after(t, t_c) && not_after(t, t_f)) || !u.mask[k][j] {
                    continue;
                }
                let p = predict(i, k, j).ok_or(TrainError::MissingPrediction {
                    unit_id: u.unit_id,
                    component: j,
                    time: t,
                })?;
                se += (p - u.y[k][j]) * (p - u.y[k][j]);
                count += 1;
            }
            if count > 0 {
                value += se / (n * var * count as f64);
                pairs += 1;
            }
        }
    }
    Ok(LossTerms { value, pairs })
}

use alloc::vec;
use alloc::vec::Vec;

use super::{Bound, ModelError, ObsNode};
use crate::autodiff::{Tape, Tensor, Var};

/// Observation history of one unit in model coordinates: model time,
/// normalized outcomes and scaled treatments. `a[k]` is applied on
/// `[times[k], times[k+1])`.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub times: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    pub a: Vec<Vec<f64>>,
}

impl History {
    /// Number of leading steps with time at or before `t`.
    pub fn steps_until(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t + 1e-9 * (1.0 + t.abs()))
    }
}

/// A model prediction fed back to the encoder as if it had been observed
/// (recursive rollout). `y` is `[rows, d_y]`; `a_prev` holds the treatment
/// applied just before `time`, one row per unit.
#[derive(Clone, Debug)]
pub struct PseudoObs {
    pub time: f64,
    pub y: Var,
    pub a_prev: Tensor,
}

/// Maps observation histories up to a decision time to latent states.
pub trait StateEncoder {
    /// Returns a `[histories.len(), d_z]` state estimate at `t_c`, using
    /// every history step with time ≤ `t_c` followed by `extra`.
    fn encode(&self, tape: &mut Tape, histories: &[History], t_c: f64, extra: &[PseudoObs]) -> Result<Var, ModelError>;
}

/// The model's own recurrent encoder.
pub struct GruEncoder<'a> {
    pub model: &'a ObsNode,
    pub bound: &'a Bound,
}

impl StateEncoder for GruEncoder<'_> {
    fn encode(&self, tape: &mut Tape, histories: &[History], t_c: f64, extra: &[PseudoObs]) -> Result<Var, ModelError> {
        let model = self.model;
        let c = model.config();
        let (d_y, d_a, hd) = (c.d_y, c.d_a, c.encoder_hidden_dim);
        let rows = histories.len();
        if rows != self.bound.rows {
            return Err(ModelError::Dimension {
                what: "batch rows",
                expected: self.bound.rows,
                got: rows,
            });
        }
        let lens: Vec<usize> = histories.iter().map(|h| h.steps_until(t_c)).collect();
        if lens.contains(&0) {
            return Err(ModelError::EmptyHistory);
        }
        for h in histories {
            let n = h.times.len();
            if h.y.len() != n || h.mask.len() != n || h.a.len() != n {
                return Err(ModelError::Dimension {
                    what: "history length",
                    expected: n,
                    got: h.y.len().min(h.mask.len()).min(h.a.len()),
                });
            }
            if h.y.iter().any(|r| r.len() != d_y)
                || h.mask.iter().any(|r| r.len() != d_y)
                || h.a.iter().any(|r| r.len() != d_a)
            {
                return Err(ModelError::Dimension {
                    what: "history width",
                    expected: d_y,
                    got: 0,
                });
            }
        }

        let mut union: Vec<f64> = histories
            .iter()
            .zip(&lens)
            .flat_map(|(h, &n)| h.times[..n].iter().copied())
            .collect();
        union.sort_by(f64::total_cmp);
        union.dedup();

        let in_rest = d_y + d_a + 1;
        let mut cursor = vec![0usize; rows];
        let mut last_time: Vec<Option<f64>> = vec![None; rows];
        let mut h = tape.constant(Tensor::zeros(&[rows, hd]))?;
        let residual = c.encoder_residual;
        let mut last_y = tape.constant(Tensor::zeros(&[rows, d_y]))?;
        for &tau in &union {
            let mut yi = vec![0.0; rows * d_y];
            let mut not_mask = vec![0.0; rows * d_y];
            let mut rest = vec![0.0; rows * in_rest];
            let mut gate = vec![0.0; rows * hd];
            let mut all_active = true;
            for (r, hist) in histories.iter().enumerate() {
                let k = cursor[r];
                if k >= lens[r] || hist.times[k] != tau {
                    all_active = false;
                    continue;
                }
                for j in 0..d_y {
                    if hist.mask[k][j] {
                        yi[r * d_y + j] = hist.y[k][j];
                        rest[r * in_rest + j] = 1.0;
                    } else {
                        not_mask[r * d_y + j] = 1.0;
                    }
                }
                if k > 0 {
                    rest[r * in_rest + d_y..r * in_rest + d_y + d_a].copy_from_slice(&hist.a[k - 1]);
                }
                rest[r * in_rest + d_y + d_a] = last_time[r].map_or(0.0, |t| tau - t);
                gate[r * hd..(r + 1) * hd].fill(1.0);
                last_time[r] = Some(tau);
                cursor[r] += 1;
            }
            let y_part = tape.constant(Tensor::matrix(rows, d_y, yi)?)?;
            let missing = tape.constant(Tensor::matrix(rows, d_y, not_mask)?)?;
            let fill = tape.hadamard(self.bound.impute_b, missing)?;
            let y_tilde = tape.add(y_part, fill)?;
            let rest = tape.constant(Tensor::matrix(rows, in_rest, rest)?)?;
            let x = tape.concat(&[y_tilde, rest], 1)?;
            let h_new = model.gru_step(tape, self.bound, x, h)?;
            if all_active {
                h = h_new;
                last_y = y_tilde;
            } else {
                h = blend(tape, h_new, h, &gate, hd)?;
                if residual {
                    let gate_y: Vec<f64> = gate.chunks(hd).flat_map(|g| vec![g[0]; d_y]).collect();
                    last_y = blend(tape, y_tilde, last_y, &gate_y, d_y)?;
                }
            }
        }

        for obs in extra {
            if tape.shape(obs.y) != [rows, d_y] || obs.a_prev.shape() != [rows, d_a] {
                return Err(ModelError::Dimension {
                    what: "pseudo-observation",
                    expected: d_y,
                    got: tape.shape(obs.y).last().copied().unwrap_or(0),
                });
            }
            let mut rest = vec![0.0; rows * in_rest];
            for r in 0..rows {
                let base = r * in_rest;
                rest[base..base + d_y].fill(1.0);
                rest[base + d_y..base + d_y + d_a].copy_from_slice(obs.a_prev.row(r));
                let prev = last_time[r].expect("history is non-empty");
                rest[base + d_y + d_a] = obs.time - prev;
                last_time[r] = Some(obs.time);
            }
            let rest = tape.constant(Tensor::matrix(rows, in_rest, rest)?)?;
            let x = tape.concat(&[obs.y, rest], 1)?;
            h = model.gru_step(tape, self.bound, x, h)?;
            last_y = obs.y;
        }
        let z = model.head(tape, self.bound, h)?;
        if !residual {
            return Ok(z);
        }
        let anchor = if c.m > 1 {
            let rest = tape.constant(Tensor::zeros(&[rows, (c.m - 1) * d_y]))?;
            tape.concat(&[last_y, rest], 1)?
        } else {
            last_y
        };
        Ok(tape.add(z, anchor)?)
    }
}

/// Row-wise `gate ? new : old` with a 0/1 `gate` of width `cols`.
fn blend(tape: &mut Tape, new: Var, old: Var, gate: &[f64], cols: usize) -> Result<Var, ModelError> {
    let rows = gate.len() / cols;
    let keep: Vec<f64> = gate.iter().map(|g| 1.0 - g).collect();
    let g = tape.constant(Tensor::matrix(rows, cols, gate.to_vec())?)?;
    let keep = tape.constant(Tensor::matrix(rows, cols, keep)?)?;
    let a = tape.hadamard(new, g)?;
    let b = tape.hadamard(old, keep)?;
    Ok(tape.add(a, b)?)
}

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{after, not_after, observed_variance};
use super::TrainError;
use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor, Var};
use crate::data::{Dataset, Split, Trajectory};
use crate::obsnode::{GruEncoder, History, ModelError, ObsNode, ObsNodeConfig};
use crate::odeint::ControlPath;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSampling {
    /// One grid value drawn uniformly at random per batch.
    UniformRandom,
    /// Batches cycle through the grid in order.
    FixedGrid,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    #[default]
    BestValidationLoss,
}

/// Training hyperparameters. All times are in dataset units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub decision_time_grid: Vec<f64>,
    pub decision_sampling: DecisionSampling,
    pub t_f: f64,
    pub seed: u64,
    #[serde(default)]
    pub checkpoint_policy: CheckpointPolicy,
    /// Caps the forecast window at `t_c + train_horizon`; `None` uses `t_f`.
    #[serde(default)]
    pub train_horizon: Option<f64>,
    /// Rescales the gradient to at most this Euclidean norm.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Decision times for the per-epoch validation loss; `None` reuses
    /// `decision_time_grid`.
    #[serde(default)]
    pub validation_grid: Option<Vec<f64>>,
}

impl TrainConfig {
    /// `n` evenly spaced decision times `0, t_f/n, …`.
    pub fn even_grid(t_f: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| t_f * k as f64 / n as f64).collect()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.t_f > 0.0 && self.t_f.is_finite()) {
            return bad("t_f must be positive");
        }
        if self.decision_time_grid.is_empty() {
            return bad("decision_time_grid must not be empty");
        }
        if self.decision_time_grid.iter().any(|&t| !(t >= 0.0 && t < self.t_f)) {
            return bad("decision times must lie in [0, t_f)");
        }
        if let Some(v) = &self.validation_grid {
            if v.is_empty() || v.iter().any(|&t| !(t >= 0.0 && t < self.t_f)) {
                return bad("validation_grid must be non-empty and lie in [0, t_f)");
            }
        }
        if self.train_horizon.is_some_and(|h| !(h > 0.0 && h.is_finite())) {
            return bad("train_horizon must be positive");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }

    fn window_end(&self, t_c: f64) -> f64 {
        self.train_horizon.map_or(self.t_f, |h| (t_c + h).min(self.t_f))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub skipped_batches: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss seen.
    pub model: ObsNode,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
}

/// Converts a (normalized) record to model coordinates.
pub fn to_history(unit: &Trajectory, config: &ObsNodeConfig) -> History {
    History {
        times: unit.times.iter().map(|t| t / config.time_scale).collect(),
        y: unit.y.clone(),
        mask: unit.mask.clone(),
        a: unit
            .a
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(l, v)| v / config.treatment_scale_at(l))
                    .collect()
            })
            .collect(),
    }
}

/// The recorded treatments of a batch as one piecewise-constant path with
/// knots at the union of all record times. Before its first record a unit
/// takes its first treatment; after its last, its last.
pub fn batch_control(histories: &[&History], d_a: usize) -> Result<ControlPath, ModelError> {
    let mut knots: Vec<f64> = histories.iter().flat_map(|h| h.times.iter().copied()).collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let rows = histories.len();
    let mut cursor = vec![0usize; rows];
    let mut values = Vec::with_capacity(knots.len());
    for &tau in &knots {
        let mut v = Vec::with_capacity(rows * d_a);
        for (r, h) in histories.iter().enumerate() {
            while cursor[r] + 1 < h.times.len() && h.times[cursor[r] + 1] <= tau {
                cursor[r] += 1;
            }
            v.extend_from_slice(&h.a[cursor[r]]);
        }
        values.push(Tensor::matrix(rows, d_a, v)?);
    }
    Ok(ControlPath::new(knots, values)?)
}

/// Targets and loss weights of a batch over `(t_c, t_end]` (model time): one
/// `[rows, d_y]` pair per query time, with weight `1 / (n σ_j² |T_ij|)` at
/// observed entries and 0 elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastWindow {
    pub query_times: Vec<f64>,
    pub targets: Vec<Tensor>,
    pub weights: Vec<Tensor>,
    pub pairs: usize,
}

pub fn forecast_window(
    histories: &[&History],
    t_c: f64,
    t_end: f64,
    variance: &[f64],
    n: usize,
) -> Result<ForecastWindow, TrainError> {
    let rows = histories.len();
    let d_y = variance.len();
    let in_window = |t: f64| after(t, t_c) && not_after(t, t_end);
    let mut query_times: Vec<f64> = histories
        .iter()
        .flat_map(|h| {
            h.times
                .iter()
                .zip(&h.mask)
                .filter(|(t, m)| in_window(**t) && m.iter().any(|&o| o))
                .map(|(t, _)| *t)
        })
        .collect();
    query_times.sort_by(f64::total_cmp);
    query_times.dedup();

    let mut counts = vec![0usize; rows * d_y];
    for (r, h) in histories.iter().enumerate() {
        for (t, m) in h.times.iter().zip(&h.mask) {
            if in_window(*t) {
                for j in 0..d_y {
                    counts[r * d_y + j] += m[j] as usize;
                }
            }
        }
    }
    let pairs = counts.iter().filter(|&&c| c > 0).count();
    let mut targets = vec![vec![0.0; rows * d_y]; query_times.len()];
    let mut weights = vec![vec![0.0; rows * d_y]; query_times.len()];
    for (r, h) in histories.iter().enumerate() {
        for (k, &t) in h.times.iter().enumerate() {
            if !in_window(t) || !h.mask[k].iter().any(|&o| o) {
                continue;
            }
            let q = query_times
                .binary_search_by(|x| x.total_cmp(&t))
                .map_err(|_| TrainError::Config("observation time missing from the query grid".into()))?;
            for j in 0..d_y {
                if h.mask[k][j] {
                    let c = counts[r * d_y + j] as f64;
                    targets[q][r * d_y + j] = h.y[k][j];
                    weights[q][r * d_y + j] = 1.0 / (n as f64 * variance[j] * c);
                }
            }
        }
    }
    let to_tensors = |v: Vec<Vec<f64>>| -> Result<Vec<Tensor>, TrainError> {
        v.into_iter().map(|x| Ok(Tensor::matrix(rows, d_y, x)?)).collect()
    };
    Ok(ForecastWindow {
        query_times,
        targets: to_tensors(targets)?,
        weights: to_tensors(weights)?,
        pairs,
    })
}

/// Records the loss of one batch on `tape`; `None` if nothing is observed in
/// the window.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_loss(
    tape: &mut Tape,
    model: &ObsNode,
    histories: &[&History],
    t_c: f64,
    t_end: f64,
    variance: &[f64],
    n: usize,
    grad: bool,
) -> Result<Option<Var>, TrainError> {
    let window = forecast_window(histories, t_c, t_end, variance, n)?;
    if window.pairs == 0 {
        return Ok(None);
    }
    let c = model.config();
    let control = batch_control(histories, c.d_a)?;
    let owned: Vec<History> = histories.iter().map(|h| (*h).clone()).collect();
    let bound = model.bind(tape, histories.len(), grad)?;
    let encoder = GruEncoder { model, bound: &bound };
    let preds = model.forecast(tape, &bound, &encoder, &owned, t_c, &control, &window.query_times, grad)?;
    let mut total: Option<Var> = None;
    for ((p, y), w) in preds.into_iter().zip(window.targets).zip(window.weights) {
        let y = tape.constant(y)?;
        let w = tape.constant(w)?;
        let diff = tape.sub(p, y)?;
        let sq = tape.square(diff)?;
        let weighted = tape.hadamard(sq, w)?;
        let s = tape.sum(weighted)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    Ok(total)
}

/// Masked loss of `model` on `histories`, summed over batches of at most
/// `batch_size` units and averaged over `grid` (model-time decision times).
fn evaluate_loss(
    model: &ObsNode,
    histories: &[History],
    grid: &[f64],
    cfg: &TrainConfig,
    variance: &[f64],
) -> Result<f64, TrainError> {
    let ts = model.config().time_scale;
    let mut total = 0.0;
    for &t_c in grid {
        let t_end = cfg.window_end(t_c * ts) / ts;
        let eligible: Vec<&History> = histories.iter().filter(|h| h.steps_until(t_c) > 0).collect();
        let n = eligible.len();
        for chunk in eligible.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            if let Some(loss) = batch_loss(&mut tape, model, chunk, t_c, t_end, variance, n, false)? {
                total += tape.value(loss).values()[0];
            }
        }
    }
    Ok(total / grid.len() as f64)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Trains on the train split of a normalized dataset, validating on the val
/// split after every epoch, and returns the best-validation parameters.
///
/// `previous` holds the metrics of earlier epochs when resuming from their
/// best checkpoint; numbering, shuffling and best-tracking continue from it.
pub fn train(
    model: ObsNode,
    data: &Dataset,
    cfg: &TrainConfig,
    previous: &[EpochMetrics],
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mc = model.config().clone();
    if data.d_y != mc.d_y || data.d_a != mc.d_a {
        return Err(TrainError::Config("dataset and model dimensions differ".into()));
    }
    let train_units = data.split(Split::Train);
    let val_units = data.split(Split::Val);
    if train_units.is_empty() || val_units.is_empty() {
        return Err(TrainError::Config("train and val splits must both be non-empty".into()));
    }
    let variance = observed_variance(&train_units, mc.d_y);
    if let Some(component) = variance.iter().position(|v| !(*v > 0.0)) {
        return Err(TrainError::ZeroVariance { component });
    }
    let train_h: Vec<History> = train_units.iter().map(|u| to_history(u, &mc)).collect();
    let val_h: Vec<History> = val_units.iter().map(|u| to_history(u, &mc)).collect();
    let ts = mc.time_scale;
    let grid: Vec<f64> = cfg.decision_time_grid.iter().map(|t| t / ts).collect();
    let val_grid: Vec<f64> = cfg
        .validation_grid
        .as_ref()
        .unwrap_or(&cfg.decision_time_grid)
        .iter()
        .map(|t| t / ts)
        .collect();

    let mut best = model.clone();
    let mut best_val = previous.iter().map(|m| m.val_loss).fold(f64::INFINITY, f64::min);
    let mut best_epoch = previous
        .iter()
        .filter(|m| m.val_loss == best_val)
        .map(|m| m.epoch)
        .next();
    let mut history = previous.to_vec();
    let mut model = model;
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
        &model.store,
    );

    for epoch in previous.len() + 1..=previous.len() + cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..train_h.len()).collect();
        order.shuffle(&mut rng);
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let mut skipped = 0;
        let mut losses = Vec::with_capacity(batches.len());
        for (b, idx) in batches.iter().enumerate() {
            let t_c = match cfg.decision_sampling {
                DecisionSampling::UniformRandom => grid[rng.random_range(0..grid.len())],
                DecisionSampling::FixedGrid => grid[b % grid.len()],
            };
            let t_end = cfg.window_end(t_c * ts) / ts;
            let members: Vec<&History> = idx
                .iter()
                .map(|&i| &train_h[i])
                .filter(|h| h.steps_until(t_c) > 0)
                .collect();
            if members.is_empty() {
                continue;
            }
            let n = members.len();
            let mut tape = Tape::new();
            let step = batch_loss(&mut tape, &model, &members, t_c, t_end, &variance, n, true).and_then(|loss| {
                let Some(loss) = loss else { return Ok(None) };
                let value = tape.value(loss).values()[0];
                let grads = tape.backward(loss)?;
                Ok(Some((value, grads)))
            });
            match step {
                Ok(None) => {}
                Ok(Some((value, grads))) => {
                    model.store.zero_grad();
                    grads.accumulate_into(&mut model.store);
                    let norm = model.store.grad_norm();
                    if !norm.is_finite() {
                        log::warn!("epoch {epoch}, batch {b}: non-finite gradient, skipped");
                        skipped += 1;
                        continue;
                    }
                    if let Some(clip) = cfg.grad_clip {
                        if norm > clip {
                            model.store.scale_grads(clip / norm);
                        }
                    }
                    adam.step(&mut model.store)?;
                    losses.push(value);
                }
                Err(e) if e.is_numeric() => {
                    log::warn!("epoch {epoch}, batch {b} (t_c = {t_c}): {e}; skipped");
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if skipped * 10 > batches.len() {
            return Err(TrainError::TooManySkipped {
                epoch,
                skipped,
                batches: batches.len(),
            });
        }
        let train_loss = if losses.is_empty() {
            f64::NAN
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        let val_loss = match evaluate_loss(&model, &val_h, &val_grid, cfg, &variance) {
            Ok(v) => v,
            Err(e) if e.is_numeric() => {
                log::warn!("epoch {epoch}: validation diverged: {e}");
                f64::INFINITY
            }
            Err(e) => return Err(e),
        };
        let metrics = EpochMetrics {
            epoch,
            train_loss,
            val_loss,
            skipped_batches: skipped,
        };
        log::info!("epoch {epoch}: train {train_loss:.6e}, val {val_loss:.6e}");
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = Some(epoch);
            best = model.clone();
        }
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
    })
}

//! Scaled RMSE over decision time × forecast horizon, display clipping,
//! CSV/PGM export and simulator-backed interventional checks.

mod counterfactual;
mod grid;

pub use counterfactual::{zero_dose_check, DirectionReport};
pub use grid::{evaluation_indices, heatmap_pgm, rmse_grid, test_scale, RmseGrid, CSV_HEADER};

use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Tensor};
use crate::data::Trajectory;
use crate::obsnode::{GruEncoder, ModelError, ObsNode};
use crate::odeint::{ControlPath, OdeError};
use crate::simulate::SimError;
use crate::train::{to_history, NormStats};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("invalid evaluation request: {0}")]
    Config(String),
    #[error("grid CSV line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl From<OdeError> for EvalError {
    fn from(e: OdeError) -> Self {
        EvalError::Model(ModelError::Ode(e))
    }
}

/// Raw-unit forecasts for one unit: `predict(unit, t_c, q)` returns one
/// `d_y` row per query time.
pub trait Predictor {
    fn predict(&self, unit: &Trajectory, t_c: f64, query_times: &[f64]) -> Result<Vec<Vec<f64>>, EvalError>;
}

/// The recorded treatments of `unit` as a single-row path in dataset units.
pub fn factual_control(unit: &Trajectory) -> Result<ControlPath, EvalError> {
    let values = unit
        .a
        .iter()
        .map(|a| Tensor::matrix(1, a.len(), a.clone()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| EvalError::Model(e.into()))?;
    Ok(ControlPath::new(unit.times.clone(), values)?)
}

/// Forecast of one unit in raw outcome units under `control` (dataset time
/// and raw treatment units, one row), from its history up to `t_c`.
pub fn forecast_unit(
    model: &ObsNode,
    stats: &NormStats,
    unit: &Trajectory,
    t_c: f64,
    control: &ControlPath,
    query_times: &[f64],
) -> Result<Vec<Vec<f64>>, EvalError> {
    let c = model.config();
    if control.dim() != c.d_a || control.knot_values()[0].rows() != 1 {
        return Err(EvalError::Config(
            "treatment path must have one row of d_a values".into(),
        ));
    }
    let history = to_history(&stats.apply_unit(unit), c);
    let knots: Vec<f64> = control.knot_times().iter().map(|t| t / c.time_scale).collect();
    let values = control
        .knot_values()
        .iter()
        .map(|v| {
            let scaled = v
                .values()
                .iter()
                .enumerate()
                .map(|(l, x)| x / c.treatment_scale_at(l))
                .collect();
            Tensor::matrix(1, c.d_a, scaled)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| EvalError::Model(e.into()))?;
    let path = ControlPath::new(knots, values)?;
    let qs: Vec<f64> = query_times.iter().map(|t| t / c.time_scale).collect();
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, 1, false)?;
    let encoder = GruEncoder { model, bound: &bound };
    let preds = model.forecast(
        &mut tape,
        &bound,
        &encoder,
        core::slice::from_ref(&history),
        t_c / c.time_scale,
        &path,
        &qs,
        false,
    )?;
    Ok(preds
        .iter()
        .map(|p| {
            tape.value(*p)
                .values()
                .iter()
                .enumerate()
                .map(|(j, &z)| stats.denormalize(j, z))
                .collect()
        })
        .collect())
}

/// A trained model forecasting under each unit's recorded treatments.
pub struct ModelPredictor<'a> {
    pub model: &'a ObsNode,
    pub stats: &'a NormStats,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, unit: &Trajectory, t_c: f64, query_times: &[f64]) -> Result<Vec<Vec<f64>>, EvalError> {
        forecast_unit(self.model, self.stats, unit, t_c, &factual_control(unit)?, query_times)
    }
}

/// Caps every value at `cap` for display; the raw grid is left untouched.
pub fn clip_for_display(grid: &RmseGrid, cap: f64) -> Result<RmseGrid, EvalError> {
    if !(cap > 0.0) {
        return Err(EvalError::Config("display cap must be positive".into()));
    }
    let mut out = grid.clone();
    for v in out.values.iter_mut().flatten() {
        *v = v.min(cap);
    }
    out.display_only = true;
    Ok(out)
}

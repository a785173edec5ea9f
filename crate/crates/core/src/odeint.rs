//! Fixed-step explicit integration of controlled vector fields `ż = f(z, a)`.
//!
//! Controls are piecewise constant. Every control knot and every query time
//! becomes a step boundary; each interval between boundaries is split into
//! equal substeps no longer than the configured step size. All steps are
//! recorded on the caller's tape, so gradients flow back through the solver
//! (discrete adjoint).

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OdeError {
    #[error("state became non-finite near t = {time}")]
    BlowUp { time: f64 },
    #[error("integration needs {needed} steps, limit is {limit}")]
    MaxSteps { needed: usize, limit: usize },
    #[error("invalid integration request: {0}")]
    Invalid(&'static str),
    #[error("error {error:e} at the coarsest step is below the resolution floor")]
    Inconclusive { error: f64 },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationConfig {
    pub method: Method,
    pub step_size: f64,
    pub max_steps: usize,
}

impl IntegrationConfig {
    pub fn rk4(step_size: f64) -> Self {
        IntegrationConfig {
            method: Method::Rk4,
            step_size,
            max_steps: 1_000_000,
        }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(OdeError::Invalid("step_size must be positive"));
        }
        if self.max_steps == 0 {
            return Err(OdeError::Invalid("max_steps must be positive"));
        }
        Ok(())
    }
}

/// Piecewise-constant control: `knot_values[k]` applies on
/// `[knot_times[k], knot_times[k+1])`, the last value holds forever after and
/// the first value also covers times before the first knot.
///
/// Knot values are tensors so that a batch of paths sharing knot times can be
/// stored as `[batch, d_a]` matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    knot_times: Vec<f64>,
    knot_values: Vec<Tensor>,
}

impl ControlPath {
    pub fn new(knot_times: Vec<f64>, knot_values: Vec<Tensor>) -> Result<Self, OdeError> {
        if knot_times.is_empty() || knot_times.len() != knot_values.len() {
            return Err(OdeError::Invalid("control path needs one value per knot"));
        }
        if knot_times.iter().any(|t| !t.is_finite()) || knot_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(OdeError::Invalid("knot times must be finite and strictly increasing"));
        }
        let shape = knot_values[0].shape();
        if knot_values.iter().any(|v| v.shape() != shape || !v.is_finite()) {
            return Err(OdeError::Invalid("knot values must share one shape and be finite"));
        }
        Ok(ControlPath {
            knot_times,
            knot_values,
        })
    }

    /// A single control vector held for all time.
    pub fn constant(value: Tensor) -> Result<Self, OdeError> {
        ControlPath::new(alloc::vec![0.0], alloc::vec![value])
    }

    pub fn knot_times(&self) -> &[f64] {
        &self.knot_times
    }

    pub fn knot_values(&self) -> &[Tensor] {
        &self.knot_values
    }

    /// Control dimension `d_a`.
    pub fn dim(&self) -> usize {
        self.knot_values[0].cols()
    }

    pub fn value_at(&self, t: f64) -> &Tensor {
        let k = self.knot_times.partition_point(|&s| s <= t);
        &self.knot_values[k.saturating_sub(1)]
    }
}

/// Right-hand side `f(z, a)` recorded on a tape. `z` is `[batch, d_z]` (or a
/// vector) and `a` is the control value for the current step.
pub trait VectorField {
    fn eval(&self, tape: &mut Tape, z: Var, a: Var) -> Result<Var, AutodiffError>;
}

impl<F> VectorField for F
where
    F: Fn(&mut Tape, Var, Var) -> Result<Var, AutodiffError>,
{
    fn eval(&self, tape: &mut Tape, z: Var, a: Var) -> Result<Var, AutodiffError> {
        self(tape, z, a)
    }
}

fn same_time(a: f64, b: f64) -> bool {
    math::abs(a - b) <= 1e-12 * (1.0 + math::abs(a).max(math::abs(b)))
}

/// Step schedule between `t0` and `t1`: the sorted boundary times and, for
/// each query, the index of its boundary.
struct Schedule {
    boundaries: Vec<f64>,
    substeps: Vec<usize>,
    query_index: Vec<usize>,
}

fn schedule(
    control: &ControlPath,
    t0: f64,
    t1: f64,
    cfg: &IntegrationConfig,
    query_times: &[f64],
) -> Result<Schedule, OdeError> {
    cfg.validate()?;
    if !(t0.is_finite() && t1.is_finite()) || t1 < t0 {
        return Err(OdeError::Invalid("need finite t0 <= t1"));
    }
    if query_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(OdeError::Invalid("query times must be sorted"));
    }
    if query_times
        .iter()
        .any(|&q| !q.is_finite() || (q < t0 && !same_time(q, t0)) || (q > t1 && !same_time(q, t1)))
    {
        return Err(OdeError::Invalid("query times must lie in [t0, t1]"));
    }

    let mut times: Vec<f64> = Vec::with_capacity(control.knot_times.len() + query_times.len() + 2);
    times.push(t0);
    times.push(t1);
    times.extend(control.knot_times.iter().copied().filter(|&k| k > t0 && k < t1));
    times.extend(query_times.iter().map(|&q| q.clamp(t0, t1)));
    times.sort_by(f64::total_cmp);
    let mut boundaries: Vec<f64> = Vec::with_capacity(times.len());
    for t in times {
        match boundaries.last() {
            Some(&last) if same_time(last, t) => {}
            _ => boundaries.push(t),
        }
    }

    let mut substeps = Vec::with_capacity(boundaries.len().saturating_sub(1));
    let mut needed = 0usize;
    for w in boundaries.windows(2) {
        let n = math::ceil((w[1] - w[0]) / cfg.step_size - 1e-9).max(1.0);
        if n > cfg.max_steps as f64 {
            return Err(OdeError::MaxSteps {
                needed: usize::MAX,
                limit: cfg.max_steps,
            });
        }
        let n = n as usize;
        needed += n;
        substeps.push(n);
    }
    if needed > cfg.max_steps {
        return Err(OdeError::MaxSteps {
            needed,
            limit: cfg.max_steps,
        });
    }

    let query_index = query_times
        .iter()
        .map(|&q| {
            boundaries
                .iter()
                .position(|&b| same_time(b, q.clamp(t0, t1)))
                .expect("every query time is a boundary")
        })
        .collect();
    Ok(Schedule {
        boundaries,
        substeps,
        query_index,
    })
}

fn blow_up(time: f64) -> impl Fn(AutodiffError) -> OdeError {
    move |e| match e {
        AutodiffError::NonFinite { .. } => OdeError::BlowUp { time },
        other => OdeError::Autodiff(other),
    }
}

fn step<F: VectorField + ?Sized>(
    tape: &mut Tape,
    field: &F,
    method: Method,
    z: Var,
    a: Var,
    h: f64,
) -> Result<Var, AutodiffError> {
    match method {
        Method::Euler => {
            let k1 = field.eval(tape, z, a)?;
            let dz = tape.scale(k1, h)?;
            tape.add(z, dz)
        }
        Method::Rk4 => {
            let k1 = field.eval(tape, z, a)?;
            let s = tape.scale(k1, 0.5 * h)?;
            let z2 = tape.add(z, s)?;
            let k2 = field.eval(tape, z2, a)?;
            let s = tape.scale(k2, 0.5 * h)?;
            let z3 = tape.add(z, s)?;
            let k3 = field.eval(tape, z3, a)?;
            let s = tape.scale(k3, h)?;
            let z4 = tape.add(z, s)?;
            let k4 = field.eval(tape, z4, a)?;
            let mid = tape.add(k2, k3)?;
            let mid = tape.scale(mid, 2.0)?;
            let acc = tape.add(k1, mid)?;
            let acc = tape.add(acc, k4)?;
            let dz = tape.scale(acc, h / 6.0)?;
            tape.add(z, dz)
        }
    }
}

/// Integrates from `z0` at `t0` to `t1`, returning the state at each query
/// time. Every step is recorded on `tape`.
pub fn integrate<F: VectorField + ?Sized>(
    tape: &mut Tape,
    field: &F,
    z0: Var,
    control: &ControlPath,
    t0: f64,
    t1: f64,
    cfg: &IntegrationConfig,
    query_times: &[f64],
) -> Result<Vec<Var>, OdeError> {
    let plan = schedule(control, t0, t1, cfg, query_times)?;
    let mut states = Vec::with_capacity(plan.boundaries.len());
    let mut z = z0;
    states.push(z);
    for (k, w) in plan.boundaries.windows(2).enumerate() {
        let n = plan.substeps[k];
        let h = (w[1] - w[0]) / n as f64;
        let a = tape.constant(control.value_at(0.5 * (w[0] + w[1])).clone())?;
        for i in 0..n {
            let t = w[0] + h * i as f64;
            z = step(tape, field, cfg.method, z, a, h).map_err(blow_up(t + h))?;
        }
        states.push(z);
    }
    Ok(plan.query_index.iter().map(|&i| states[i]).collect())
}

/// Like [`integrate`] but without gradients: nodes recorded during a step
/// are dropped again afterwards, so memory stays flat over long horizons.
/// Anything the field captured from `tape` before the call stays valid.
pub fn integrate_values<F: VectorField + ?Sized>(
    tape: &mut Tape,
    field: &F,
    z0: &Tensor,
    control: &ControlPath,
    t0: f64,
    t1: f64,
    cfg: &IntegrationConfig,
    query_times: &[f64],
) -> Result<Vec<Tensor>, OdeError> {
    let plan = schedule(control, t0, t1, cfg, query_times)?;
    let mark = tape.len();
    let mut states = Vec::with_capacity(plan.boundaries.len());
    let mut z = z0.clone();
    states.push(z.clone());
    for (k, w) in plan.boundaries.windows(2).enumerate() {
        let n = plan.substeps[k];
        let h = (w[1] - w[0]) / n as f64;
        let a_value = control.value_at(0.5 * (w[0] + w[1]));
        for i in 0..n {
            let t = w[0] + h * i as f64;
            let zv = tape.constant(z).map_err(blow_up(t))?;
            let a = tape.constant(a_value.clone())?;
            let next = step(tape, field, cfg.method, zv, a, h).map_err(blow_up(t + h));
            let next = match next {
                Ok(v) => tape.value(v).clone(),
                Err(e) => {
                    tape.truncate(mark);
                    return Err(e);
                }
            };
            tape.truncate(mark);
            z = next;
        }
        states.push(z.clone());
    }
    Ok(plan.query_index.iter().map(|&i| states[i].clone()).collect())
}

/// Empirical order of accuracy: `log2(err(dt) / err(dt/2))` averaged over
/// three successive halvings of `cfg.step_size`, with the error measured
/// against `reference` (the exact state at `t1`) in the max norm.
pub fn convergence_order<F: VectorField + ?Sized>(
    tape: &mut Tape,
    field: &F,
    z0: &Tensor,
    control: &ControlPath,
    t0: f64,
    t1: f64,
    cfg: &IntegrationConfig,
    reference: &Tensor,
) -> Result<f64, OdeError> {
    let mut errors = [0.0f64; 4];
    for (k, err) in errors.iter_mut().enumerate() {
        let c = IntegrationConfig {
            step_size: cfg.step_size / (1u64 << k) as f64,
            max_steps: cfg.max_steps.saturating_mul(1 << k),
            ..*cfg
        };
        let z1 = integrate_values(tape, field, z0, control, t0, t1, &c, &[t1])?;
        if z1[0].shape() != reference.shape() {
            return Err(OdeError::Invalid("reference shape differs from state shape"));
        }
        *err = z1[0]
            .values()
            .iter()
            .zip(reference.values())
            .map(|(a, b)| math::abs(a - b))
            .fold(0.0, f64::max);
    }
    if errors[0] < 1e-13 {
        return Err(OdeError::Inconclusive { error: errors[0] });
    }
    let mut total = 0.0;
    for w in errors.windows(2) {
        total += math::log2(w[0] / w[1].max(f64::MIN_POSITIVE));
    }
    Ok(total / 3.0)
}

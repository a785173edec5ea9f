use alloc::vec;
use alloc::vec::Vec;

use super::{factual_control, forecast_unit, EvalError};
use crate::autodiff::Tensor;
use crate::data::Trajectory;
use crate::math;
use crate::obsnode::ObsNode;
use crate::odeint::ControlPath;
use crate::simulate::{simulate_cancer_unit, CancerSimConfig, DoseRegime};
use crate::train::NormStats;

/// Outcome of withdrawing treatment at `t_c` for noiseless simulated cancer
/// patients.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionReport {
    /// Patients treated at some point in `[t_c, t_c + horizon)`.
    pub eligible: usize,
    /// Eligible patients whose zero-dose forecast volume exceeds the
    /// factual-dose forecast at `t_c + horizon`.
    pub model_higher: usize,
    /// Same ordering in the simulator.
    pub simulator_higher: usize,
    /// Eligible patients where model and simulator order the two paths alike.
    pub agree: usize,
    /// Scaled RMSE of the zero-dose forecast against the re-simulated
    /// zero-dose trajectory over `(t_c, t_c + horizon]`, per component.
    pub interventional_rmse: Vec<f64>,
}

impl DirectionReport {
    pub fn model_fraction(&self) -> f64 {
        self.model_higher as f64 / self.eligible.max(1) as f64
    }
}

fn truncated_path(unit: &Trajectory, t_c: f64, after: &[f64]) -> Result<ControlPath, EvalError> {
    let mut knots = Vec::new();
    let mut values = Vec::new();
    for (t, a) in unit.times.iter().zip(&unit.a) {
        let v = if *t < t_c - 1e-9 * (1.0 + t_c.abs()) {
            a.clone()
        } else {
            after.to_vec()
        };
        knots.push(*t);
        values.push(Tensor::matrix(1, v.len(), v).map_err(|e| EvalError::Model(e.into()))?);
    }
    Ok(ControlPath::new(knots, values)?)
}

/// Re-simulates each listed patient with noise off under the confounded
/// policy and under the same doses up to `t_c` followed by no treatment, and
/// compares the model's forecasts under both recorded paths.
/// `t_c` must fall on a cycle boundary.
pub fn zero_dose_check(
    model: &ObsNode,
    stats: &NormStats,
    sim: &CancerSimConfig,
    unit_ids: &[u64],
    t_c: f64,
    horizon: f64,
    scale: &[f64],
) -> Result<DirectionReport, EvalError> {
    let cycles_before = t_c / sim.cycle_days;
    if (cycles_before - math::round(cycles_before)).abs() > 1e-9 {
        return Err(EvalError::Config("t_c must be a cycle boundary".into()));
    }
    let cycles_before = math::round(cycles_before) as usize;
    let quiet = CancerSimConfig {
        noise: false,
        ..sim.clone()
    };
    let mut report = DirectionReport {
        eligible: 0,
        model_higher: 0,
        simulator_higher: 0,
        agree: 0,
        interventional_rmse: Vec::new(),
    };
    let d_y = scale.len();
    let mut se = vec![0.0; d_y];
    let mut count = vec![0usize; d_y];
    let end = t_c + horizon;
    for &id in unit_ids {
        let (_, factual) = simulate_cancer_unit(&quiet, id, &DoseRegime::Policy)?;
        let per_cycle: Vec<(f64, f64)> = (0..cycles_before)
            .map(|c| {
                let k = factual.index_at(c as f64 * sim.cycle_days).unwrap_or(0);
                (factual.a[k][0], factual.a[k][1])
            })
            .chain([(0.0, 0.0)])
            .collect();
        let treated = factual
            .times
            .iter()
            .zip(&factual.a)
            .any(|(t, a)| *t >= t_c - 1e-9 && *t < end - 1e-9 && a.iter().any(|&x| x != 0.0));
        if !treated {
            continue;
        }
        let (_, withdrawn) = simulate_cancer_unit(&quiet, id, &DoseRegime::PerCycle(per_cycle))?;
        let k_end = factual
            .index_at(end)
            .ok_or_else(|| EvalError::Config("horizon beyond the simulated record".into()))?;
        let qs: Vec<f64> = factual
            .times
            .iter()
            .copied()
            .filter(|&t| t > t_c + 1e-9 && t <= end + 1e-9)
            .collect();
        if qs.last().is_none_or(|&t| (t - factual.times[k_end]).abs() > 1e-9) {
            return Err(EvalError::Config("no record at t_c + horizon".into()));
        }
        let zero = vec![0.0; factual.a[0].len()];
        let f_pred = forecast_unit(model, stats, &factual, t_c, &factual_control(&factual)?, &qs)?;
        let z_pred = forecast_unit(model, stats, &factual, t_c, &truncated_path(&factual, t_c, &zero)?, &qs)?;
        report.eligible += 1;
        let model_up = z_pred.last().unwrap()[0] > f_pred.last().unwrap()[0];
        let sim_up = withdrawn.y[k_end][0] > factual.y[k_end][0];
        report.model_higher += model_up as usize;
        report.simulator_higher += sim_up as usize;
        report.agree += (model_up == sim_up) as usize;
        for (q, p) in qs.iter().zip(&z_pred) {
            let k = withdrawn.index_at(*q).expect("query inside the record");
            for j in 0..d_y {
                se[j] += (p[j] - withdrawn.y[k][j]) * (p[j] - withdrawn.y[k][j]);
                count[j] += 1;
            }
        }
    }
    report.interventional_rmse = (0..d_y)
        .map(|j| math::sqrt(se[j] / count[j].max(1) as f64) / scale[j])
        .collect();
    Ok(report)
}

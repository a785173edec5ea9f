use alloc::vec::Vec;

use super::{Bound, Field, History, ModelError, ObsNode, PseudoObs, RolloutMode, StateEncoder};
use crate::autodiff::{Tape, Tensor, Var};
use crate::odeint::{integrate, integrate_values, ControlPath};

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

impl ObsNode {
    /// Integrates the latent field from `z0` at `t0` and returns the states at
    /// `query_times`. Without `grad` the per-step nodes are discarded and the
    /// states come back as constants.
    pub fn rollout(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        z0: Var,
        control: &ControlPath,
        t0: f64,
        query_times: &[f64],
        grad: bool,
    ) -> Result<Vec<Var>, ModelError> {
        let Some(&t1) = query_times.last() else {
            return Ok(Vec::new());
        };
        let field = Field { model: self, bound };
        let cfg = &self.config().integration;
        if grad {
            Ok(integrate(tape, &field, z0, control, t0, t1, cfg, query_times)?)
        } else {
            let z = tape.value(z0).clone();
            let states = integrate_values(tape, &field, &z, control, t0, t1, cfg, query_times)?;
            states
                .into_iter()
                .map(|s| tape.constant(s).map_err(ModelError::from))
                .collect()
        }
    }

    /// Predicted outcomes `[rows, d_y]` at each of the sorted `query_times`
    /// (all ≥ `t_c`) under the treatment path `control`, starting from the
    /// encoder's state estimate at `t_c`.
    #[allow(clippy::too_many_arguments)]
    pub fn forecast<E: StateEncoder + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        encoder: &E,
        histories: &[History],
        t_c: f64,
        control: &ControlPath,
        query_times: &[f64],
        grad: bool,
    ) -> Result<Vec<Var>, ModelError> {
        let rows = histories.len();
        let c = self.config();
        if control.knot_values()[0].shape() != [rows, c.d_a] {
            return Err(ModelError::Dimension {
                what: "treatment path",
                expected: c.d_a,
                got: control.dim(),
            });
        }
        if query_times.first().is_some_and(|&q| q < t_c && !close(q, t_c)) {
            return Err(ModelError::Config("query times must not precede t_c".into()));
        }
        let z = encoder.encode(tape, histories, t_c, &[])?;
        match c.rollout_mode {
            RolloutMode::LongHorizon => {
                let states = self.rollout(tape, bound, z, control, t_c, query_times, grad)?;
                states.into_iter().map(|s| self.emit(tape, s)).collect()
            }
            RolloutMode::Recursive => {
                self.recursive(tape, bound, encoder, histories, t_c, control, query_times, grad, z)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn recursive<E: StateEncoder + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        encoder: &E,
        histories: &[History],
        t_c: f64,
        control: &ControlPath,
        query_times: &[f64],
        grad: bool,
        mut z: Var,
    ) -> Result<Vec<Var>, ModelError> {
        let Some(&t_end) = query_times.last() else {
            return Ok(Vec::new());
        };
        let chunk = self.config().recursive_chunk;
        let mut out = Vec::with_capacity(query_times.len());
        let mut extra: Vec<PseudoObs> = Vec::new();
        let mut t = t_c;
        let mut qi = 0;
        while qi < query_times.len() {
            let mut t_next = (t + chunk).min(t_end);
            if close(t_next, t_end) {
                t_next = t_end;
            }
            let start = qi;
            while qi < query_times.len() && (query_times[qi] <= t_next || close(query_times[qi], t_next)) {
                qi += 1;
            }
            let mut times: Vec<f64> = query_times[start..qi].to_vec();
            if times.last().is_none_or(|&l| !close(l, t_next)) {
                times.push(t_next);
            }
            let states = self.rollout(tape, bound, z, control, t, &times, grad)?;
            let mut prev = t;
            for (k, (&time, &state)) in times.iter().zip(&states).enumerate() {
                let y = self.emit(tape, state)?;
                if start + k < qi {
                    out.push(y);
                }
                if time > t && !close(time, t) {
                    extra.push(PseudoObs {
                        time,
                        y,
                        a_prev: control.value_at(0.5 * (prev + time)).clone(),
                    });
                    prev = time;
                }
            }
            t = t_next;
            if qi < query_times.len() {
                z = encoder.encode(tape, histories, t_c, &extra)?;
            }
        }
        Ok(out)
    }

    /// Sampled distinguishability check: for each pair of initial states,
    /// integrates both under the same control over `[t0, t0 + horizon]`
    /// (`t0` = first knot) and takes the largest output gap in the max norm
    /// over `n_samples` evenly spaced times; returns the smallest such gap.
    pub fn observability_probe(
        &self,
        control: &ControlPath,
        pairs: &[(Vec<f64>, Vec<f64>)],
        horizon: f64,
        n_samples: usize,
    ) -> Result<f64, ModelError> {
        let c = self.config();
        if pairs.is_empty() || n_samples < 2 || !(horizon > 0.0) {
            return Err(ModelError::Config(
                "probe needs pairs, horizon > 0 and at least 2 samples".into(),
            ));
        }
        let rows = 2 * pairs.len();
        let mut z0 = Vec::with_capacity(rows * c.d_z());
        for (zeta, eta) in pairs {
            for s in [zeta, eta] {
                if s.len() != c.d_z() {
                    return Err(ModelError::Dimension {
                        what: "probe state",
                        expected: c.d_z(),
                        got: s.len(),
                    });
                }
                z0.extend_from_slice(s);
            }
        }
        let tiled = tile_rows(control, rows)?;
        let t0 = control.knot_times()[0];
        let times: Vec<f64> = (0..n_samples)
            .map(|k| t0 + horizon * k as f64 / (n_samples - 1) as f64)
            .collect();
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, rows, false)?;
        let z = tape.constant(Tensor::matrix(rows, c.d_z(), z0)?)?;
        let states = self.rollout(&mut tape, &bound, z, &tiled, t0, &times, false)?;
        let mut gaps = alloc::vec![0.0f64; pairs.len()];
        for s in states {
            let v = tape.value(s);
            for (p, gap) in gaps.iter_mut().enumerate() {
                for j in 0..c.d_y {
                    let d = (v.get(2 * p, j) - v.get(2 * p + 1, j)).abs();
                    *gap = gap.max(d);
                }
            }
        }
        Ok(gaps.into_iter().fold(f64::INFINITY, f64::min))
    }
}

/// Repeats a single-row control path for `rows` units.
pub fn tile_rows(control: &ControlPath, rows: usize) -> Result<ControlPath, ModelError> {
    let values = control
        .knot_values()
        .iter()
        .map(|v| {
            let row = v.row(0);
            let mut out = Vec::with_capacity(rows * row.len());
            for _ in 0..rows {
                out.extend_from_slice(row);
            }
            Tensor::matrix(rows, row.len(), out)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ControlPath::new(control.knot_times().to_vec(), values)?)
}

//! Semi-synthetic outcomes: smooth untreated trajectories driven partly by a
//! hidden confounder process, binary treatments whose propensity depends on
//! recent outcomes and on the confounder, and decaying windowed effects.
//!
//! Timing: hour `k`'s treatment is applied on `[k, k+1)` and first shows in
//! the outcome at hour `k + 1`, with weight `1/(s − k)²` at hour `s`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::rff::{rff_function, Kernel, RffFunction};
use super::{unit_rng, SimError};
use crate::data::{Dataset, Trajectory};
use crate::math;

/// Stream id of the dataset-level draws (shared functions and weights).
const SHARED_STREAM: u64 = u64::MAX;

fn d_alpha_s() -> f64 {
    2.0
}
fn d_alpha_g() -> f64 {
    0.5
}
fn d_one() -> f64 {
    1.0
}
fn d_nu() -> usize {
    20
}
fn d_gamma_a() -> Vec<f64> {
    vec![0.3, 0.3]
}
fn d_gamma_eps() -> Vec<f64> {
    vec![0.3, 0.1]
}
fn d_bias() -> Vec<f64> {
    vec![-2.0, -2.0]
}
fn d_w() -> Vec<usize> {
    vec![3, 3]
}
fn d_eta() -> f64 {
    0.005
}
fn d_eps() -> usize {
    3
}
fn d_gp_len() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiSynthConfig {
    pub n_patients: usize,
    pub horizon_hours: usize,
    pub d_y: usize,
    #[serde(default = "d_alpha_s")]
    pub alpha_s: f64,
    #[serde(default = "d_alpha_g")]
    pub alpha_g: f64,
    #[serde(default = "d_one")]
    pub alpha_phi: f64,
    /// Random Fourier feature count of every sampled function.
    #[serde(default = "d_nu")]
    pub nu: usize,
    #[serde(default = "d_gamma_a")]
    pub gamma_a: Vec<f64>,
    #[serde(default = "d_gamma_eps")]
    pub gamma_eps: Vec<f64>,
    #[serde(default = "d_bias")]
    pub bias: Vec<f64>,
    /// Effect size used when `beta_matrix` is absent.
    #[serde(default = "d_one")]
    pub beta: f64,
    /// `[d_a][d_y]` effect sizes; by default treatment 1 acts on component 1
    /// and treatment 2 on all others.
    #[serde(default)]
    pub beta_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default = "d_w")]
    pub w: Vec<usize>,
    #[serde(default = "d_eta")]
    pub eta_sd: f64,
    #[serde(default = "d_eps")]
    pub d_eps: usize,
    /// Lengthscale (hours) of the Matérn processes g and ε.
    #[serde(default = "d_gp_len")]
    pub gp_lengthscale: f64,
    /// Lengthscale of the functions of ε.
    #[serde(default = "d_one")]
    pub eps_lengthscale: f64,
    pub seed: u64,
}

impl Default for SemiSynthConfig {
    fn default() -> Self {
        SemiSynthConfig {
            n_patients: 300,
            horizon_hours: 72,
            d_y: 2,
            alpha_s: d_alpha_s(),
            alpha_g: d_alpha_g(),
            alpha_phi: 1.0,
            nu: d_nu(),
            gamma_a: d_gamma_a(),
            gamma_eps: d_gamma_eps(),
            bias: d_bias(),
            beta: 1.0,
            beta_matrix: None,
            w: d_w(),
            eta_sd: d_eta(),
            d_eps: d_eps(),
            gp_lengthscale: d_gp_len(),
            eps_lengthscale: 1.0,
            seed: 0,
        }
    }
}

impl SemiSynthConfig {
    pub fn d_a(&self) -> usize {
        self.bias.len()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let d_a = self.d_a();
        if d_a == 0 || self.gamma_a.len() != d_a || self.gamma_eps.len() != d_a || self.w.len() != d_a {
            return Err(SimError::Config(
                "gamma_a, gamma_eps, bias and w need one entry per treatment",
            ));
        }
        if self.d_y == 0 || self.horizon_hours == 0 || self.d_eps == 0 || self.nu == 0 {
            return Err(SimError::Config("d_y, horizon_hours, d_eps and nu must be positive"));
        }
        if self.w.iter().any(|&w| w < 1) {
            return Err(SimError::Config("effect windows must be at least 1"));
        }
        if !(self.eta_sd > 0.0) || !(self.gp_lengthscale > 0.0) || !(self.eps_lengthscale > 0.0) {
            return Err(SimError::Config("eta_sd and lengthscales must be positive"));
        }
        let finite = [self.alpha_s, self.alpha_g, self.alpha_phi, self.beta]
            .iter()
            .chain(&self.gamma_a)
            .chain(&self.gamma_eps)
            .chain(&self.bias)
            .all(|v| v.is_finite());
        if !finite {
            return Err(SimError::Config("weights must be finite"));
        }
        if let Some(m) = &self.beta_matrix {
            if m.len() != d_a
                || m.iter()
                    .any(|r| r.len() != self.d_y || r.iter().any(|b| !b.is_finite()))
            {
                return Err(SimError::Config("beta_matrix must be d_a x d_y and finite"));
            }
        }
        Ok(())
    }

    /// `[d_a][d_y]` effect sizes.
    pub fn effect_matrix(&self) -> Vec<Vec<f64>> {
        if let Some(m) = &self.beta_matrix {
            return m.clone();
        }
        let d_a = self.d_a();
        (0..d_a)
            .map(|l| {
                (0..self.d_y)
                    .map(|j| {
                        let target = if l == 0 { j == 0 } else { j >= 1 || self.d_y == 1 };
                        if target && (l < 2) {
                            self.beta
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Cardinal cubic B-spline supported on `[0, 4]`.
pub fn cubic_bspline(u: f64) -> f64 {
    if !(0.0..4.0).contains(&u) {
        0.0
    } else if u < 1.0 {
        u * u * u / 6.0
    } else if u < 2.0 {
        (-3.0 * u * u * u + 12.0 * u * u - 12.0 * u + 4.0) / 6.0
    } else if u < 3.0 {
        (3.0 * u * u * u - 24.0 * u * u + 60.0 * u - 44.0) / 6.0
    } else {
        let r = 4.0 - u;
        r * r * r / 6.0
    }
}

/// Mixture of three cubic B-splines centred at 1/4, 1/2 and 3/4 of the
/// horizon, each spanning the whole horizon.
pub fn spline_mixture(weights: &[f64; 3], t: f64, horizon: f64) -> f64 {
    let h = horizon / 4.0;
    (0..3)
        .map(|k| weights[k] * cubic_bspline((t - h * (k + 1) as f64) / h + 2.0))
        .sum()
}

/// Functions and weights shared by all units of one dataset.
#[derive(Clone, Debug)]
pub struct SharedDraws {
    pub spline_weights: Vec<[f64; 3]>,
    pub phi_y: Vec<RffFunction>,
    pub phi_eps: Vec<RffFunction>,
}

pub fn shared_draws(config: &SemiSynthConfig) -> Result<SharedDraws, SimError> {
    let mut rng: ChaCha8Rng = unit_rng(config.seed, SHARED_STREAM);
    let spline_weights = (0..config.d_y)
        .map(|_| {
            let raw: [f64; 3] = [
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            ];
            let total: f64 = raw.iter().sum::<f64>().max(1e-12);
            [raw[0] / total, raw[1] / total, raw[2] / total]
        })
        .collect();
    let phi_y = (0..config.d_y)
        .map(|_| rff_function(&mut rng, config.d_eps, config.nu, config.eps_lengthscale, Kernel::Rbf))
        .collect::<Result<_, _>>()?;
    let phi_eps = (0..config.d_a())
        .map(|_| rff_function(&mut rng, config.d_eps, config.nu, config.eps_lengthscale, Kernel::Rbf))
        .collect::<Result<_, _>>()?;
    Ok(SharedDraws {
        spline_weights,
        phi_y,
        phi_eps,
    })
}

/// Simulates one unit on the hourly grid `0..=horizon_hours`.
pub fn simulate_semi_unit(
    config: &SemiSynthConfig,
    shared: &SharedDraws,
    unit_id: u64,
) -> Result<Trajectory, SimError> {
    let mut rng: ChaCha8Rng = unit_rng(config.seed, unit_id);
    let (d_y, d_a, horizon) = (config.d_y, config.d_a(), config.horizon_hours);
    let beta = config.effect_matrix();
    let eps_fns: Vec<RffFunction> = (0..config.d_eps)
        .map(|_| rff_function(&mut rng, 1, config.nu, config.gp_lengthscale, Kernel::Matern32))
        .collect::<Result<_, _>>()?;
    let g_fns: Vec<RffFunction> = (0..d_y)
        .map(|_| rff_function(&mut rng, 1, config.nu, config.gp_lengthscale, Kernel::Matern32))
        .collect::<Result<_, _>>()?;
    let eta = Normal::new(0.0, config.eta_sd).map_err(|_| SimError::Config("invalid eta_sd"))?;
    let w_max = config.w.iter().copied().max().unwrap_or(1);

    let n = horizon + 1;
    let mut times = Vec::with_capacity(n);
    let mut treated: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut untreated: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut eps_path: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut actions: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut propensity: Vec<Vec<f64>> = Vec::with_capacity(n);
    for s in 0..n {
        let t = s as f64;
        let eps: Vec<f64> = eps_fns.iter().map(|f| f.eval(&[t])).collect();
        let mut y0 = Vec::with_capacity(d_y);
        for j in 0..d_y {
            let base = config.alpha_s * spline_mixture(&shared.spline_weights[j], t, horizon as f64)
                + config.alpha_g * g_fns[j].eval(&[t])
                + config.alpha_phi * shared.phi_y[j].eval(&eps)
                + eta.sample(&mut rng);
            y0.push(base);
        }
        let mut y = y0.clone();
        for (j, yj) in y.iter_mut().enumerate() {
            *yj += effect(s, j, &actions, &propensity, &beta, &config.w, w_max);
        }

        let mut p_row = Vec::with_capacity(d_a);
        let mut a_row = Vec::with_capacity(d_a);
        for l in 0..d_a {
            let affected: Vec<usize> = (0..d_y).filter(|&j| beta[l][j] > 0.0).collect();
            let lo = s.saturating_sub(config.w[l]);
            let mut sum = 0.0;
            let mut count = 0usize;
            for row in &treated[lo..s] {
                for &j in &affected {
                    sum += row[j];
                    count += 1;
                }
            }
            let y_bar = if count > 0 { sum / count as f64 } else { 0.0 };
            let logit = config.gamma_a[l] * y_bar + config.gamma_eps[l] * shared.phi_eps[l].eval(&eps) + config.bias[l];
            let p = math::sigmoid(logit);
            let a = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
            p_row.push(p);
            a_row.push(a);
        }

        times.push(t);
        treated.push(y);
        untreated.push(y0);
        eps_path.push(eps);
        actions.push(a_row);
        propensity.push(p_row);
    }
    Ok(Trajectory {
        unit_id,
        times,
        mask: vec![vec![true; d_y]; n],
        y: treated,
        a: actions,
        latents: Some(untreated),
        confounders: Some(eps_path),
    })
}

/// Effect on component `j` at hour `s` from treatments given at hours before
/// `s`: per hour `k`, the smallest `P β` among active treatments acting on
/// `j` whose window still covers `s`, weighted by `1/(s − k)²`.
fn effect(
    s: usize,
    j: usize,
    actions: &[Vec<f64>],
    propensity: &[Vec<f64>],
    beta: &[Vec<f64>],
    w: &[usize],
    w_max: usize,
) -> f64 {
    let mut total = 0.0;
    for k in s.saturating_sub(w_max + 1)..s {
        let lag = s - 1 - k;
        let mut m: Option<f64> = None;
        for l in 0..w.len() {
            if actions[k][l] == 1.0 && beta[l][j] > 0.0 && lag <= w[l] {
                let v = propensity[k][l] * beta[l][j];
                m = Some(m.map_or(v, |x: f64| x.min(v)));
            }
        }
        if let Some(v) = m {
            let d = (s - k) as f64;
            total += v / (d * d);
        }
    }
    total
}

pub fn generate_semi_synthetic(config: &SemiSynthConfig) -> Result<Dataset, SimError> {
    config.validate()?;
    let shared = shared_draws(config)?;
    let units = (0..config.n_patients as u64)
        .map(|id| simulate_semi_unit(config, &shared, id))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::with_index_split(config.d_y, config.d_a(), units))
}

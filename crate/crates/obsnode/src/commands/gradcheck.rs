use obsnode_core::autodiff::{grad_check, AutodiffError, Tape, Tensor, Var};
use obsnode_core::simulate::unit_rng;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pool;
use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub networks: usize,
    pub tolerance: f64,
    /// Largest relative error of each network, in order.
    pub errors: Vec<f64>,
    pub max_error: f64,
    pub failures: usize,
}

#[derive(Clone, Copy)]
enum Act {
    Tanh,
    Sigmoid,
    LeakyRelu,
}

/// Random perceptron `index` of the family drawn from `seed`: 1–3 dense
/// layers of width 1–4 with a random activation each, a batch of 1–3 rows
/// and a mean-square-plus-sum head. Returns the largest relative error of
/// reverse mode against central differences over inputs and weights.
pub fn check_network(seed: u64, index: usize) -> std::result::Result<f64, AutodiffError> {
    let mut rng = unit_rng(seed, index as u64);
    let rows = rng.random_range(1..=3);
    let depth = rng.random_range(1..=3);
    let widths: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=4)).collect();
    let acts: Vec<Act> = (0..depth)
        .map(|_| match rng.random_range(0..3) {
            0 => Act::Tanh,
            1 => Act::Sigmoid,
            _ => Act::LeakyRelu,
        })
        .collect();
    let mut tensor =
        |r: usize, c: usize| Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect());
    let mut inputs = vec![tensor(rows, widths[0])?];
    for w in widths.windows(2) {
        inputs.push(tensor(w[0], w[1])?);
        inputs.push(tensor(1, w[1])?);
    }
    let f = |tape: &mut Tape, v: &[Var]| -> std::result::Result<Var, AutodiffError> {
        let mut h = v[0];
        for (l, act) in acts.iter().enumerate() {
            let z = tape.matmul(h, v[1 + 2 * l])?;
            let b = tape.repeat_rows(v[2 + 2 * l], rows)?;
            let z = tape.add(z, b)?;
            h = match act {
                Act::Tanh => tape.tanh(z)?,
                Act::Sigmoid => tape.sigmoid(z)?,
                Act::LeakyRelu => tape.leaky_relu(z)?,
            };
        }
        let sq = tape.square(h)?;
        let m = tape.mean(sq)?;
        let s = tape.sum(h)?;
        let s = tape.scale(s, 0.5)?;
        tape.add(m, s)
    };
    grad_check(f, &inputs, 1e-5)
}

pub fn gradcheck(networks: usize, seed: u64, tolerance: f64) -> Result<GradcheckReport> {
    if networks == 0 || !(tolerance > 0.0) {
        return Err(CliError::usage("networks and tolerance must be positive"));
    }
    let errors = pool()?.install(|| {
        (0..networks)
            .into_par_iter()
            .map(|i| check_network(seed, i))
            .collect::<std::result::Result<Vec<_>, _>>()
    });
    let errors = errors.map_err(|e| CliError::Numeric(e.to_string()))?;
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(GradcheckReport {
        networks,
        tolerance,
        failures: errors.iter().filter(|&&e| !(e < tolerance)).count(),
        errors,
        max_error,
    })
}

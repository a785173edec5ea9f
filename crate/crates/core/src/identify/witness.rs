use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{tv_distance, DiscreteScm, IdentifyError, InterventionQuery};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    /// TV distance between the laws of the observable `(y, a)` paths of A and B.
    pub observational_tv: f64,
    /// TV distance between the two interventional truths for the query.
    pub interventional_tv: f64,
    pub truth_a: Vec<f64>,
    pub truth_b: Vec<f64>,
    /// The adjustment formula applied to the collapsed model, the smallest
    /// model with the shared observational law; data cannot tell A from B,
    /// so this is the estimate for both.
    pub adjustment: Vec<f64>,
    pub deviation_a: f64,
    pub deviation_b: f64,
    /// `max |adjustment − truth|` for the collapsed model itself.
    pub collapsed_deviation: f64,
    /// TV distance between the observable laws of the collapsed model and A.
    pub collapsed_observational_tv: f64,
}

fn law_tv(a: &DiscreteScm, b: &DiscreteScm) -> Result<f64, IdentifyError> {
    let (la, lb) = (a.observational_law()?, b.observational_law()?);
    let keys: BTreeSet<&Vec<usize>> = la.keys().chain(lb.keys()).collect();
    let pa: Vec<f64> = keys.iter().map(|k| la.get(*k).copied().unwrap_or(0.0)).collect();
    let pb: Vec<f64> = keys.iter().map(|k| lb.get(*k).copied().unwrap_or(0.0)).collect();
    Ok(tv_distance(&pa, &pb))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Latent states `u, v, H, L` emit `o, o, h, l`. The observational policy
/// never treats at output `o`, and without treatment every state stays put,
/// so `u` and `v` cannot be told apart. Under treatment, `u` and `v` both go
/// to `H` or `L` with equal odds in model A, while in model B `u` goes to
/// `H` and `v` to `L`. Both start in `u` with probability 0.8.
fn witness_pair() -> (DiscreteScm, DiscreteScm) {
    let stay = |z: usize| {
        let mut r = vec![0.0; 4];
        r[z] = 1.0;
        r
    };
    let emit = |y: usize| {
        let mut r = vec![0.0; 3];
        r[y] = 1.0;
        vec![r]
    };
    let split = vec![0.0, 0.0, 0.5, 0.5];
    let a = DiscreteScm {
        n_z: 4,
        n_y: 3,
        n_a: 2,
        n_e: 1,
        horizon: 2,
        eps_init: vec![1.0],
        eps_trans: vec![vec![1.0]],
        z_init: vec![0.8, 0.2, 0.0, 0.0],
        z_trans: vec![
            vec![stay(0), split.clone()],
            vec![stay(1), split],
            vec![stay(2), stay(2)],
            vec![stay(3), stay(3)],
        ],
        emission: vec![emit(0), emit(0), emit(1), emit(2)],
        policy: vec![vec![
            vec![vec![1.0, 0.0]; 3],
            vec![vec![0.5, 0.5]; 3],
            vec![vec![0.5, 0.5]; 3],
        ]],
    };
    let mut b = a.clone();
    b.z_trans[0][1] = stay(2);
    b.z_trans[1][1] = stay(3);
    (a, b)
}

/// Two models with one observational law but different effects of
/// treating at the first step.
pub fn nonidentifiability_witness(
) -> Result<(DiscreteScm, DiscreteScm, InterventionQuery, WitnessReport), IdentifyError> {
    let (a, b) = witness_pair();
    a.validate()?;
    b.validate()?;
    let query = InterventionQuery {
        y_prefix: vec![0],
        a_prefix: vec![],
        actions: vec![1],
    };
    let truth_a = a.interventional_truth(&query)?;
    let truth_b = b.interventional_truth(&query)?;
    let collapsed = a.merge_states(0, 1)?;
    let (adjustment, _) = collapsed.adjustment_estimate(&query)?;
    let collapsed_truth = collapsed.interventional_truth(&query)?;
    let report = WitnessReport {
        observational_tv: law_tv(&a, &b)?,
        interventional_tv: tv_distance(&truth_a, &truth_b),
        deviation_a: max_abs_diff(&adjustment, &truth_a),
        deviation_b: max_abs_diff(&adjustment, &truth_b),
        collapsed_deviation: max_abs_diff(&adjustment, &collapsed_truth),
        collapsed_observational_tv: law_tv(&collapsed, &a)?,
        truth_a,
        truth_b,
        adjustment,
    };
    Ok((a, b, query, report))
}

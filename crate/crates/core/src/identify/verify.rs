use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{tv_distance, DiscreteScm, IdentifyError, InterventionQuery};
use crate::simulate::unit_rng;

fn random_dist<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// A random SCM whose latent states are told apart by their outputs: every
/// `z` puts more than half of its emission mass on its own symbol, whatever
/// `ε` is; the first `ε` value emits cleanly, the others noisily. `ε` is drawn afresh each step, so `p(y | z)` does not depend on
/// the history.
pub fn random_observable_scm<R: Rng + ?Sized>(
    rng: &mut R,
    n_z: usize,
    n_y: usize,
    n_a: usize,
    n_e: usize,
    horizon: usize,
) -> Result<DiscreteScm, IdentifyError> {
    if n_y < n_z {
        return Err(IdentifyError::Invalid(
            "an observable model needs at least as many outputs as states".into(),
        ));
    }
    let eps_init = random_dist(rng, n_e);
    let mut symbols: Vec<usize> = (0..n_y).collect();
    symbols.shuffle(rng);
    let emission = (0..n_z)
        .map(|z| {
            (0..n_e)
                .map(|e| {
                    let lambda = if e == 0 {
                        rng.random_range(0.0..0.1)
                    } else {
                        rng.random_range(0.25..0.45)
                    };
                    let mut row: Vec<f64> = random_dist(rng, n_y).into_iter().map(|p| lambda * p).collect();
                    row[symbols[z]] += 1.0 - lambda;
                    let s: f64 = row.iter().sum();
                    row.into_iter().map(|p| p / s).collect()
                })
                .collect()
        })
        .collect();
    // Each action moves states along its own permutation, so where the unit
    // is now still matters after the step.
    let perms: Vec<Vec<usize>> = (0..n_a)
        .map(|_| {
            let mut p: Vec<usize> = (0..n_z).collect();
            p.shuffle(rng);
            p
        })
        .collect();
    let z_trans = (0..n_z)
        .map(|z| (0..n_a).map(|a| peaked_at(rng, n_z, perms[a][z])).collect())
        .collect();
    let scm = DiscreteScm {
        n_z,
        n_y,
        n_a,
        n_e,
        horizon,
        eps_trans: vec![eps_init.clone(); n_e],
        eps_init,
        z_init: random_dist(rng, n_z),
        z_trans,
        emission,
        policy: (0..n_e)
            .map(|_| {
                (0..n_y)
                    .map(|_| (0..=n_a).map(|_| peaked_dist(rng, n_a)).collect())
                    .collect()
            })
            .collect(),
    };
    scm.validate()?;
    Ok(scm)
}

/// Most of the mass on one random entry: treatment choices that react
/// sharply to outcome and confounder.
fn peaked_dist<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let top = rng.random_range(0..n);
    peaked_at(rng, n, top)
}

fn peaked_at<R: Rng + ?Sized>(rng: &mut R, n: usize, top: usize) -> Vec<f64> {
    let weight = rng.random_range(0.8..0.95);
    let mut row: Vec<f64> = random_dist(rng, n).into_iter().map(|p| (1.0 - weight) * p).collect();
    row[top] += weight;
    let s: f64 = row.iter().sum();
    row.into_iter().map(|p| p / s).collect()
}

fn sample<R: Rng + ?Sized>(rng: &mut R, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&q| q > 0.0).unwrap_or(0)
}

/// A query whose prefix is a forward sample from the model (so it has
/// positive probability), with random decision step, horizon and actions.
pub fn random_query<R: Rng + ?Sized>(rng: &mut R, scm: &DiscreteScm) -> InterventionQuery {
    let t = rng.random_range(0..scm.horizon - 1);
    let s = rng.random_range(1..scm.horizon - t);
    random_query_at(rng, scm, t, s)
}

/// Like [`random_query`] with decision step `t` and horizon `s` given.
pub fn random_query_at<R: Rng + ?Sized>(rng: &mut R, scm: &DiscreteScm, t: usize, s: usize) -> InterventionQuery {
    let (mut e, mut z) = (sample(rng, &scm.eps_init), sample(rng, &scm.z_init));
    let mut y_prefix = Vec::new();
    let mut a_prefix: Vec<usize> = Vec::new();
    for k in 0..=t {
        if k > 0 {
            e = sample(rng, &scm.eps_trans[e]);
            z = sample(rng, &scm.z_trans[z][a_prefix[k - 1]]);
        }
        let y = sample(rng, &scm.emission[z][e]);
        y_prefix.push(y);
        if k < t {
            let slot = if k == 0 { 0 } else { 1 + a_prefix[k - 1] };
            a_prefix.push(sample(rng, &scm.policy[e][y][slot]));
        }
    }
    InterventionQuery {
        y_prefix,
        a_prefix,
        actions: (0..s).map(|_| rng.random_range(0..scm.n_a)).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub index: usize,
    pub n_z: usize,
    pub n_y: usize,
    pub queries: usize,
    /// Largest `|adjustment − truth|` over queries and outcomes.
    pub max_deviation: f64,
    /// Largest `|Σ filter − 1|`.
    pub filter_error: f64,
    /// Largest TV distance between the naive observational conditional and
    /// the truth.
    pub naive_tv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub instances: Vec<InstanceReport>,
    pub max_deviation: f64,
    pub max_filter_error: f64,
    /// Share of instances whose naive conditional is off by at least 0.02 TV.
    pub confounded_fraction: f64,
}

/// Every (decision step, horizon) pair available with three steps.
const SPLITS: [(usize, usize); 3] = [(0, 2), (0, 1), (1, 1)];

/// Checks the adjustment formula against enumeration on random instance
/// `index` of the family drawn from `seed`: `T = 3`, `|A| = |E| = 2` and
/// `|Z| ≤ |Y| ≤ 4`. Query k covers `SPLITS[k % 3]`, so every (decision step,
/// horizon) pair is exercised once `queries ≥ 3`.
pub fn verify_instance(index: usize, seed: u64, queries: usize) -> Result<InstanceReport, IdentifyError> {
    let mut rng = unit_rng(seed, index as u64);
    let n_z = rng.random_range(2..=4);
    let n_y = rng.random_range(n_z..=4);
    let scm = random_observable_scm(&mut rng, n_z, n_y, 2, 2, 3)?;
    let mut report = InstanceReport {
        index,
        n_z,
        n_y,
        queries,
        max_deviation: 0.0,
        filter_error: 0.0,
        naive_tv: 0.0,
    };
    for k in 0..queries {
        let (t, s) = SPLITS[k % SPLITS.len()];
        let q = random_query_at(&mut rng, &scm, t, s);
        let truth = scm.interventional_truth(&q)?;
        let (est, filter) = scm.adjustment_estimate(&q)?;
        let dev = truth.iter().zip(&est).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        report.max_deviation = report.max_deviation.max(dev);
        report.filter_error = report.filter_error.max((filter.iter().sum::<f64>() - 1.0).abs());
        let naive = scm.observational_conditional(&q)?;
        report.naive_tv = report.naive_tv.max(tv_distance(&naive, &truth));
    }
    Ok(report)
}

/// Folds per-instance reports, in the given order, into a summary.
pub fn summarize(instances: Vec<InstanceReport>) -> VerificationSummary {
    let n = instances.len();
    let max_deviation = instances.iter().map(|r| r.max_deviation).fold(0.0, f64::max);
    let max_filter_error = instances.iter().map(|r| r.filter_error).fold(0.0, f64::max);
    let confounded = instances.iter().filter(|r| r.naive_tv >= 0.02).count();
    VerificationSummary {
        confounded_fraction: confounded as f64 / n.max(1) as f64,
        instances,
        max_deviation,
        max_filter_error,
    }
}

/// [`verify_instance`] for instances `0..n`.
pub fn verify_random_instances(n: usize, seed: u64, queries: usize) -> Result<VerificationSummary, IdentifyError> {
    let instances = (0..n)
        .map(|i| verify_instance(i, seed, queries))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(instances))
}

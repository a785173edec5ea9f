use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{IdentifyError, MAX_TRAJECTORIES};

/// A finite SCM unrolled over `horizon` steps. At step `k`:
/// `ε_k ~ eps_init` (k = 0) or `eps_trans[ε_{k-1}]`;
/// `z_k ~ z_init` (k = 0) or `z_trans[z_{k-1}][a_{k-1}]`;
/// `y_k ~ emission[z_k][ε_k]`; `a_k ~ policy[ε_k][y_k][prev]` with
/// `prev = 0` at k = 0 and `1 + a_{k-1}` afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteScm {
    pub n_z: usize,
    pub n_y: usize,
    pub n_a: usize,
    pub n_e: usize,
    pub horizon: usize,
    pub eps_init: Vec<f64>,
    pub eps_trans: Vec<Vec<f64>>,
    pub z_init: Vec<f64>,
    pub z_trans: Vec<Vec<Vec<f64>>>,
    pub emission: Vec<Vec<Vec<f64>>>,
    pub policy: Vec<Vec<Vec<Vec<f64>>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Step {
    pub e: usize,
    pub z: usize,
    pub y: usize,
    pub a: usize,
}

/// Condition on `y_0..=y_t` and `a_0..a_{t-1}`, set `a_t..a_{t+s-1}` to
/// `actions`, and ask for the law of `y_{t+s}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionQuery {
    pub y_prefix: Vec<usize>,
    pub a_prefix: Vec<usize>,
    pub actions: Vec<usize>,
}

impl InterventionQuery {
    pub fn t(&self) -> usize {
        self.a_prefix.len()
    }

    pub fn target(&self) -> usize {
        self.t() + self.actions.len()
    }
}

fn check_dist(row: &[f64], len: usize, what: &str) -> Result<(), IdentifyError> {
    if row.len() != len {
        return Err(IdentifyError::Invalid(format!(
            "{what}: expected {len} entries, got {}",
            row.len()
        )));
    }
    if row.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
        return Err(IdentifyError::Invalid(format!(
            "{what}: probabilities must be finite and non-negative"
        )));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(IdentifyError::Invalid(format!("{what}: sums to {s}, not 1")));
    }
    Ok(())
}

/// How actions are chosen while enumerating.
#[derive(Clone, Copy)]
enum Actions<'a> {
    Policy,
    /// Point masses on `actions` from step `from` on.
    Fixed {
        from: usize,
        actions: &'a [usize],
    },
}

/// Observed prefix that enumeration may prune against.
#[derive(Clone, Copy)]
struct Prefix<'a> {
    y: &'a [usize],
    a: &'a [usize],
}

impl DiscreteScm {
    pub fn validate(&self) -> Result<(), IdentifyError> {
        if self.n_z == 0 || self.n_y == 0 || self.n_a == 0 || self.n_e == 0 || self.horizon == 0 {
            return Err(IdentifyError::Invalid(
                "every space and the horizon must be non-empty".into(),
            ));
        }
        check_dist(&self.eps_init, self.n_e, "eps_init")?;
        check_dist(&self.z_init, self.n_z, "z_init")?;
        if self.eps_trans.len() != self.n_e {
            return Err(IdentifyError::Invalid("eps_trans needs one row per ε".into()));
        }
        for (e, row) in self.eps_trans.iter().enumerate() {
            check_dist(row, self.n_e, &format!("eps_trans[{e}]"))?;
        }
        if self.z_trans.len() != self.n_z || self.z_trans.iter().any(|r| r.len() != self.n_a) {
            return Err(IdentifyError::Invalid("z_trans must be indexed [z][a]".into()));
        }
        for (z, rows) in self.z_trans.iter().enumerate() {
            for (a, row) in rows.iter().enumerate() {
                check_dist(row, self.n_z, &format!("z_trans[{z}][{a}]"))?;
            }
        }
        if self.emission.len() != self.n_z || self.emission.iter().any(|r| r.len() != self.n_e) {
            return Err(IdentifyError::Invalid("emission must be indexed [z][ε]".into()));
        }
        for (z, rows) in self.emission.iter().enumerate() {
            for (e, row) in rows.iter().enumerate() {
                check_dist(row, self.n_y, &format!("emission[{z}][{e}]"))?;
            }
        }
        if self.policy.len() != self.n_e
            || self
                .policy
                .iter()
                .any(|r| r.len() != self.n_y || r.iter().any(|c| c.len() != self.n_a + 1))
        {
            return Err(IdentifyError::Invalid(
                "policy must be indexed [ε][y][1 + previous a]".into(),
            ));
        }
        for (e, rows) in self.policy.iter().enumerate() {
            for (y, cells) in rows.iter().enumerate() {
                for (p, row) in cells.iter().enumerate() {
                    check_dist(row, self.n_a, &format!("policy[{e}][{y}][{p}]"))?;
                }
            }
        }
        Ok(())
    }

    /// `(|E|·|Z|·|Y|·|A|)^T`.
    pub fn trajectory_count(&self) -> u128 {
        let per = (self.n_e * self.n_z * self.n_y * self.n_a) as u128;
        (0..self.horizon).fold(1u128, |acc, _| acc.saturating_mul(per))
    }

    fn check_size(&self) -> Result<(), IdentifyError> {
        self.validate()?;
        let count = self.trajectory_count();
        if count > MAX_TRAJECTORIES {
            return Err(IdentifyError::TooLarge { count });
        }
        Ok(())
    }

    fn check_query(&self, q: &InterventionQuery) -> Result<(), IdentifyError> {
        let t = q.t();
        if q.y_prefix.len() != t + 1 {
            return Err(IdentifyError::Query("y_prefix must be one longer than a_prefix".into()));
        }
        if q.actions.is_empty() {
            return Err(IdentifyError::Query(
                "at least one intervened action is required".into(),
            ));
        }
        if q.target() >= self.horizon {
            return Err(IdentifyError::Query(format!(
                "target step {} is beyond the horizon {}",
                q.target(),
                self.horizon
            )));
        }
        if q.y_prefix.iter().any(|&y| y >= self.n_y) || q.a_prefix.iter().chain(&q.actions).any(|&a| a >= self.n_a) {
            return Err(IdentifyError::Query("symbol out of range".into()));
        }
        Ok(())
    }

    /// Depth-first enumeration of every trajectory with positive
    /// probability; branches inconsistent with `prefix` are cut.
    fn walk(&self, steps: usize, actions: Actions, prefix: Option<Prefix>, visit: &mut dyn FnMut(&[Step], f64)) {
        let mut path = Vec::with_capacity(steps);
        self.walk_from(0, steps, 1.0, &mut path, actions, prefix, visit);
    }

    #[allow(clippy::too_many_arguments)]
    fn walk_from(
        &self,
        k: usize,
        steps: usize,
        p: f64,
        path: &mut Vec<Step>,
        actions: Actions,
        prefix: Option<Prefix>,
        visit: &mut dyn FnMut(&[Step], f64),
    ) {
        if k == steps {
            visit(path, p);
            return;
        }
        let prev = path.last().copied();
        for e in 0..self.n_e {
            let pe = match prev {
                None => self.eps_init[e],
                Some(s) => self.eps_trans[s.e][e],
            };
            if pe == 0.0 {
                continue;
            }
            for z in 0..self.n_z {
                let pz = match prev {
                    None => self.z_init[z],
                    Some(s) => self.z_trans[s.z][s.a][z],
                };
                if pz == 0.0 {
                    continue;
                }
                for y in 0..self.n_y {
                    if let Some(pre) = prefix {
                        if k < pre.y.len() && pre.y[k] != y {
                            continue;
                        }
                    }
                    let py = self.emission[z][e][y];
                    if py == 0.0 {
                        continue;
                    }
                    for a in 0..self.n_a {
                        if let Some(pre) = prefix {
                            if k < pre.a.len() && pre.a[k] != a {
                                continue;
                            }
                        }
                        let pa = match actions {
                            Actions::Fixed { from, actions } if k >= from && k - from < actions.len() => {
                                (actions[k - from] == a) as u8 as f64
                            }
                            _ => {
                                let slot = prev.map_or(0, |s| 1 + s.a);
                                self.policy[e][y][slot][a]
                            }
                        };
                        if pa == 0.0 {
                            continue;
                        }
                        path.push(Step { e, z, y, a });
                        self.walk_from(k + 1, steps, p * pe * pz * py * pa, path, actions, prefix, visit);
                        path.pop();
                    }
                }
            }
        }
    }

    /// Every trajectory over the full horizon with its probability.
    pub fn enumerate_joint(&self) -> Result<Vec<(Vec<Step>, f64)>, IdentifyError> {
        self.check_size()?;
        let mut out = Vec::new();
        self.walk(self.horizon, Actions::Policy, None, &mut |path, p| {
            out.push((path.to_vec(), p))
        });
        Ok(out)
    }

    /// Law of the observable `(y, a)` paths, keyed by the interleaved
    /// sequence `y_0, a_0, y_1, a_1, …`.
    pub fn observational_law(&self) -> Result<BTreeMap<Vec<usize>, f64>, IdentifyError> {
        self.check_size()?;
        let mut law = BTreeMap::new();
        self.walk(self.horizon, Actions::Policy, None, &mut |path, p| {
            let key: Vec<usize> = path.iter().flat_map(|s| [s.y, s.a]).collect();
            *law.entry(key).or_insert(0.0) += p;
        });
        Ok(law)
    }

    /// Law of `y` at the query's target step given the prefix, under
    /// `actions` from step `t` on (the policy elsewhere).
    fn conditional_target(&self, q: &InterventionQuery, actions: Actions) -> Result<Vec<f64>, IdentifyError> {
        self.check_query(q)?;
        self.conditional_target_with(q, q.target(), actions)
    }

    fn conditional_target_with(
        &self,
        q: &InterventionQuery,
        target: usize,
        actions: Actions,
    ) -> Result<Vec<f64>, IdentifyError> {
        self.check_size()?;
        let mut dist = vec![0.0; self.n_y];
        let prefix = Prefix {
            y: &q.y_prefix,
            a: &q.a_prefix,
        };
        self.walk(target + 1, actions, Some(prefix), &mut |path, p| {
            dist[path[target].y] += p
        });
        let mass: f64 = dist.iter().sum();
        if mass <= 0.0 {
            return Err(IdentifyError::ZeroProbability);
        }
        Ok(dist.into_iter().map(|d| d / mass).collect())
    }

    /// Ground truth: the policy is replaced by point masses on the
    /// intervened actions and the prefix is conditioned on.
    pub fn interventional_truth(&self, q: &InterventionQuery) -> Result<Vec<f64>, IdentifyError> {
        self.conditional_target(
            q,
            Actions::Fixed {
                from: q.t(),
                actions: &q.actions,
            },
        )
    }

    /// The naive observational conditional that also conditions on the
    /// intervened actions having been chosen by the policy.
    pub fn observational_conditional(&self, q: &InterventionQuery) -> Result<Vec<f64>, IdentifyError> {
        let mut a_prefix = q.a_prefix.clone();
        a_prefix.extend_from_slice(&q.actions);
        let naive = InterventionQuery {
            y_prefix: q.y_prefix.clone(),
            a_prefix,
            actions: Vec::new(),
        };
        self.check_query(q)?;
        self.conditional_target_with(&naive, q.target(), Actions::Policy)
    }

    /// `p(z_t | y_0..=y_t, a_0..a_{t-1})`, enumerated over `(ε, z)` paths
    /// and marginalized to `z`.
    pub fn filter(&self, q: &InterventionQuery) -> Result<Vec<f64>, IdentifyError> {
        self.check_size()?;
        self.check_query(q)?;
        let t = q.t();
        let mut dist = vec![0.0; self.n_z];
        let prefix = Prefix {
            y: &q.y_prefix,
            a: &q.a_prefix,
        };
        // The action at step t is irrelevant to z_t; fix it to cut branching.
        let fixed = [0usize];
        self.walk(
            t + 1,
            Actions::Fixed {
                from: t,
                actions: &fixed,
            },
            Some(prefix),
            &mut |path, p| dist[path[t].z] += p,
        );
        let mass: f64 = dist.iter().sum();
        if mass <= 0.0 {
            return Err(IdentifyError::ZeroProbability);
        }
        Ok(dist.into_iter().map(|d| d / mass).collect())
    }

    /// Marginal law of `ε_k` under its own dynamics.
    pub fn eps_marginal(&self, k: usize) -> Vec<f64> {
        let mut p = self.eps_init.clone();
        for _ in 0..k {
            let mut next = vec![0.0; self.n_e];
            for (e, pe) in p.iter().enumerate() {
                for (f, q) in self.eps_trans[e].iter().enumerate() {
                    next[f] += pe * q;
                }
            }
            p = next;
        }
        p
    }

    /// The observation model with `ε` integrated out by its marginal at step
    /// `k`: `p(y | z) = Σ_ε q(y | z, ε) p(ε_k)`.
    pub fn emission_marginal(&self, k: usize) -> Vec<Vec<f64>> {
        let pe = self.eps_marginal(k);
        (0..self.n_z)
            .map(|z| {
                (0..self.n_y)
                    .map(|y| (0..self.n_e).map(|e| self.emission[z][e][y] * pe[e]).sum())
                    .collect()
            })
            .collect()
    }

    /// Filter × latent propagation under the intervened actions × marginal
    /// emission. Returns the estimate and the filter it used.
    pub fn adjustment_estimate(&self, q: &InterventionQuery) -> Result<(Vec<f64>, Vec<f64>), IdentifyError> {
        let filter = self.filter(q)?;
        let mut pz = filter.clone();
        for &a in &q.actions {
            let mut next = vec![0.0; self.n_z];
            for (z, p) in pz.iter().enumerate() {
                for (w, q) in self.z_trans[z][a].iter().enumerate() {
                    next[w] += p * q;
                }
            }
            pz = next;
        }
        let emission = self.emission_marginal(q.target());
        let est = (0..self.n_y)
            .map(|y| (0..self.n_z).map(|z| pz[z] * emission[z][y]).sum())
            .collect();
        Ok((est, filter))
    }

    /// Merges latent state `drop` into `keep`. Only allowed when both emit
    /// alike and, with the merge applied, transition alike.
    pub fn merge_states(&self, keep: usize, drop: usize) -> Result<DiscreteScm, IdentifyError> {
        if keep == drop || keep >= self.n_z || drop >= self.n_z {
            return Err(IdentifyError::Invalid(
                "merge needs two distinct existing states".into(),
            ));
        }
        let fold = |row: &[f64]| -> Vec<f64> {
            let mut r: Vec<f64> = row.to_vec();
            r[keep] += r[drop];
            r.remove(drop);
            r
        };
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-15);
        for a in 0..self.n_a {
            if !close(&fold(&self.z_trans[keep][a]), &fold(&self.z_trans[drop][a])) {
                return Err(IdentifyError::NotBisimilar(keep, drop));
            }
        }
        for e in 0..self.n_e {
            if !close(&self.emission[keep][e], &self.emission[drop][e]) {
                return Err(IdentifyError::NotBisimilar(keep, drop));
            }
        }
        let mut out = self.clone();
        out.n_z -= 1;
        out.z_init = fold(&self.z_init);
        out.z_trans = (0..self.n_z)
            .filter(|&z| z != drop)
            .map(|z| self.z_trans[z].iter().map(|r| fold(r)).collect())
            .collect();
        out.emission = (0..self.n_z)
            .filter(|&z| z != drop)
            .map(|z| self.emission[z].clone())
            .collect();
        Ok(out)
    }
}

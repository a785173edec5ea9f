use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::{EvalError, Predictor};
use crate::data::Trajectory;
use crate::math;
use crate::train::observed_variance;

pub const CSV_HEADER: &str = "t_c,horizon,component,rmse,n_points";

/// Scaled RMSE per (decision time, horizon, component). Horizon `s_k` covers
/// observations in `(t_c + s_{k-1}, t_c + s_k]` with `s_0 = 0`; a bin without
/// observations is `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmseGrid {
    pub assimilation_times: Vec<f64>,
    pub horizons: Vec<f64>,
    pub d_y: usize,
    /// Indexed `(t * horizons + h) * d_y + j`.
    pub values: Vec<Option<f64>>,
    pub n_points: Vec<usize>,
    /// Per-component divisor (test-set sd). Not part of the CSV.
    pub scale: Vec<f64>,
    /// Set on clipped copies.
    pub display_only: bool,
}

impl RmseGrid {
    fn index(&self, t: usize, h: usize, j: usize) -> usize {
        (t * self.horizons.len() + h) * self.d_y + j
    }

    pub fn get(&self, t: usize, h: usize, j: usize) -> Option<f64> {
        self.values[self.index(t, h, j)]
    }

    pub fn points(&self, t: usize, h: usize, j: usize) -> usize {
        self.n_points[self.index(t, h, j)]
    }

    /// One-component grid holding the mean over components present in each
    /// bin.
    pub fn mean_over_components(&self) -> RmseGrid {
        let cells = self.assimilation_times.len() * self.horizons.len();
        let mut values = Vec::with_capacity(cells);
        let mut n_points = Vec::with_capacity(cells);
        for c in 0..cells {
            let row = &self.values[c * self.d_y..(c + 1) * self.d_y];
            let present: Vec<f64> = row.iter().flatten().copied().collect();
            values.push((!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64));
            n_points.push(self.n_points[c * self.d_y..(c + 1) * self.d_y].iter().sum());
        }
        RmseGrid {
            assimilation_times: self.assimilation_times.clone(),
            horizons: self.horizons.clone(),
            d_y: 1,
            values,
            n_points,
            scale: Vec::new(),
            display_only: self.display_only,
        }
    }

    /// Rows ordered by decision time, horizon, component; absent bins have
    /// an empty rmse field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for (t, tc) in self.assimilation_times.iter().enumerate() {
            for (h, s) in self.horizons.iter().enumerate() {
                for j in 0..self.d_y {
                    let v = self.get(t, h, j).map(|v| v.to_string()).unwrap_or_default();
                    out.push_str(&format!("{tc},{s},{j},{v},{}\n", self.points(t, h, j)));
                }
            }
        }
        out
    }

    /// Parses [`RmseGrid::to_csv`] output. The scale is not stored and comes
    /// back empty.
    pub fn from_csv(text: &str) -> Result<RmseGrid, EvalError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            _ => {
                return Err(EvalError::Csv {
                    line: 1,
                    message: format!("expected header {CSV_HEADER}"),
                })
            }
        }
        let mut rows: Vec<(f64, f64, usize, Option<f64>, usize)> = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: &str| EvalError::Csv {
                line: i + 1,
                message: message.into(),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(err("expected 5 fields"));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| err("malformed number"));
            let int = |s: &str| s.trim().parse::<usize>().map_err(|_| err("malformed integer"));
            let v = if f[3].trim().is_empty() { None } else { Some(num(f[3])?) };
            rows.push((num(f[0])?, num(f[1])?, int(f[2])?, v, int(f[4])?));
        }
        let mut times: Vec<f64> = rows.iter().map(|r| r.0).collect();
        times.dedup();
        let mut horizons: Vec<f64> = Vec::new();
        for r in &rows {
            if r.0 != times[0] {
                break;
            }
            if horizons.last() != Some(&r.1) {
                horizons.push(r.1);
            }
        }
        let d_y = rows.iter().map(|r| r.2 + 1).max().unwrap_or(0);
        let grid = RmseGrid {
            values: rows.iter().map(|r| r.3).collect(),
            n_points: rows.iter().map(|r| r.4).collect(),
            assimilation_times: times,
            horizons,
            d_y,
            scale: Vec::new(),
            display_only: false,
        };
        if grid.values.len() != grid.assimilation_times.len() * grid.horizons.len() * d_y
            || rows.iter().enumerate().any(|(k, r)| {
                let j = k % d_y;
                let h = (k / d_y) % grid.horizons.len();
                let t = k / (d_y * grid.horizons.len());
                r.0 != grid.assimilation_times[t] || r.1 != grid.horizons[h] || r.2 != j
            })
        {
            return Err(EvalError::Csv {
                line: 0,
                message: "rows do not form a complete, ordered grid".into(),
            });
        }
        Ok(grid)
    }
}

/// Population sd of each component over all observed test points.
pub fn test_scale(units: &[&Trajectory], d_y: usize) -> Vec<f64> {
    observed_variance(units, d_y).into_iter().map(math::sqrt).collect()
}

fn ascending(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[0] < w[1])
}

/// Scaled RMSE of `predictor` on `units` under their recorded treatments.
/// Units with no record at or before a decision time are skipped for it.
/// Records of `unit` scored from decision time `t_c`: those with at least
/// one observed component in `(t_c, t_c + max_horizon]`.
pub fn evaluation_indices(unit: &Trajectory, t_c: f64, max_horizon: f64) -> Vec<usize> {
    let end = t_c + max_horizon;
    (0..unit.len())
        .filter(|&k| {
            let t = unit.times[k];
            t > t_c + 1e-9 * (1.0 + t_c.abs()) && t <= end + 1e-9 * (1.0 + end.abs()) && unit.mask[k].iter().any(|&m| m)
        })
        .collect()
}

pub fn rmse_grid<P: Predictor + ?Sized>(
    predictor: &P,
    units: &[&Trajectory],
    assimilation_times: &[f64],
    horizons: &[f64],
    scale: &[f64],
) -> Result<RmseGrid, EvalError> {
    if !ascending(assimilation_times) || !ascending(horizons) || horizons.first().is_none_or(|&h| h <= 0.0) {
        return Err(EvalError::Config(
            "decision times and horizons must be ascending, horizons positive".into(),
        ));
    }
    let d_y = scale.len();
    if scale.iter().any(|s| !(*s > 0.0)) {
        return Err(EvalError::Config("scale entries must be positive".into()));
    }
    let n_h = horizons.len();
    let cells = assimilation_times.len() * n_h * d_y;
    let mut se = vec![0.0; cells];
    let mut count = vec![0usize; cells];
    let max_h = horizons[n_h - 1];
    for (ti, &t_c) in assimilation_times.iter().enumerate() {
        for u in units {
            if u.index_at(t_c).is_none() {
                continue;
            }
            let idx = evaluation_indices(u, t_c, max_h);
            if idx.is_empty() {
                continue;
            }
            let qs: Vec<f64> = idx.iter().map(|&k| u.times[k]).collect();
            let preds = predictor.predict(u, t_c, &qs)?;
            for (&k, p) in idx.iter().zip(&preds) {
                let s = u.times[k] - t_c;
                let h = horizons.partition_point(|&b| b < s - 1e-9 * (1.0 + b.abs()));
                for j in 0..d_y {
                    if u.mask[k][j] {
                        let c = (ti * n_h + h) * d_y + j;
                        se[c] += (p[j] - u.y[k][j]) * (p[j] - u.y[k][j]);
                        count[c] += 1;
                    }
                }
            }
        }
    }
    let values = se
        .iter()
        .zip(&count)
        .enumerate()
        .map(|(c, (&e, &n))| (n > 0).then(|| math::sqrt(e / n as f64) / scale[c % d_y]))
        .collect();
    Ok(RmseGrid {
        assimilation_times: assimilation_times.to_vec(),
        horizons: horizons.to_vec(),
        d_y,
        values,
        n_points: count,
        scale: scale.to_vec(),
        display_only: false,
    })
}

/// Binary greyscale (P5) image of component `j`: one `cell × cell` block per
/// bin, decision time left to right, horizon bottom to top. Present values
/// map linearly from white (0) to dark grey (`cap` and above, 16); absent
/// bins are black.
pub fn heatmap_pgm(grid: &RmseGrid, j: usize, cap: f64, cell: usize) -> Vec<u8> {
    let (w, h) = (grid.assimilation_times.len() * cell, grid.horizons.len() * cell);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        let hi = grid.horizons.len() - 1 - y / cell;
        for x in 0..w {
            let pixel = match grid.get(x / cell, hi, j) {
                Some(v) => 255 - math::round(239.0 * v.min(cap) / cap) as u8,
                None => 0,
            };
            out.push(pixel);
        }
    }
    out
}

use std::fs;
use std::path::PathBuf;

use obsnode_core::autodiff::Tensor;
use obsnode_core::data::Trajectory;
use obsnode_core::evaluate::{evaluation_indices, forecast_unit};
use obsnode_core::odeint::ControlPath;

use super::push_row;
use crate::checkpoint;
use crate::dataset;
use crate::error::{CliError, Result};

/// Where to forecast.
#[derive(Clone, Debug, PartialEq)]
pub enum QueryTimes {
    /// The unit's recorded times in `(t_c, t_c + h]` with an observed
    /// component, as scored by `evaluate`.
    Horizon(f64),
    Times(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastRequest {
    pub checkpoint: PathBuf,
    pub dataset_dir: PathBuf,
    pub unit_id: u64,
    /// Treatment-path CSV; `None` keeps the unit's recorded treatments.
    pub treatment: Option<PathBuf>,
    pub t_c: f64,
    pub query: QueryTimes,
}

/// A unit's recorded treatments as a treatment-path CSV.
pub fn treatment_csv(unit: &Trajectory) -> String {
    let d_a = unit.a.first().map_or(0, Vec::len);
    let mut out = String::from("start_time");
    for l in 1..=d_a {
        out.push_str(&format!(",component_{l}"));
    }
    out.push('\n');
    for (t, a) in unit.times.iter().zip(&unit.a) {
        out.push_str(&t.to_string());
        push_row(&mut out, a.iter().copied());
    }
    out
}

/// Parses `start_time,component_1,…,component_d` rows into a
/// piecewise-constant one-row path.
pub fn parse_treatment(text: &str, d_a: usize, origin: &str) -> Result<ControlPath> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| CliError::data(format!("{origin}: {e}")))?;
    let expected: Vec<String> = std::iter::once("start_time".to_string())
        .chain((1..=d_a).map(|l| format!("component_{l}")))
        .collect();
    if header.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
        return Err(CliError::data(format!(
            "{origin}: header must be `{}`",
            expected.join(",")
        )));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let bad = |msg: String| CliError::data(format!("{origin} line {}: {msg}", i + 2));
        let row = row.map_err(|e| bad(e.to_string()))?;
        let nums = row
            .iter()
            .map(|c| c.trim().parse::<f64>().map_err(|e| bad(format!("`{c}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(bad("values must be finite".into()));
        }
        if times.last().is_some_and(|&t| nums[0] <= t) {
            return Err(bad("start times must be strictly increasing".into()));
        }
        times.push(nums[0]);
        values.push(Tensor::matrix(1, d_a, nums[1..].to_vec()).map_err(|e| bad(e.to_string()))?);
    }
    if times.is_empty() {
        return Err(CliError::data(format!("{origin}: no treatment rows")));
    }
    ControlPath::new(times, values).map_err(|e| CliError::data(format!("{origin}: {e}")))
}

/// Predictions for one unit as CSV `time,component_1,…`, in raw outcome
/// units, under the requested treatment path.
pub fn forecast(req: &ForecastRequest) -> Result<String> {
    let (model, stats) = checkpoint::load(&req.checkpoint)?;
    let (data, _) = dataset::read(&req.dataset_dir)?;
    let unit = data
        .unit(req.unit_id)
        .ok_or_else(|| CliError::data(format!("unit {} is not in {}", req.unit_id, req.dataset_dir.display())))?;
    let c = model.config();
    if c.d_y != data.d_y || c.d_a != data.d_a {
        return Err(CliError::usage("checkpoint and dataset dimensions differ"));
    }
    let control = match &req.treatment {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
            parse_treatment(&text, c.d_a, &path.display().to_string())?
        }
        None => parse_treatment(&treatment_csv(unit), c.d_a, "recorded treatments")?,
    };
    if unit.index_at(req.t_c).is_none() {
        return Err(CliError::data(format!(
            "unit {} has no record at or before t_c = {}",
            unit.unit_id, req.t_c
        )));
    }
    let times = match &req.query {
        QueryTimes::Horizon(h) => {
            if !(*h > 0.0) {
                return Err(CliError::usage("horizon must be positive"));
            }
            evaluation_indices(unit, req.t_c, *h)
                .into_iter()
                .map(|k| unit.times[k])
                .collect()
        }
        QueryTimes::Times(ts) => {
            if ts.iter().any(|&t| !(t > req.t_c)) || ts.windows(2).any(|w| w[1] <= w[0]) {
                return Err(CliError::usage("query times must be increasing and after t_c"));
            }
            ts.clone()
        }
    };
    let preds = forecast_unit(&model, &stats, unit, req.t_c, &control, &times)?;
    let mut out = String::from("time");
    for j in 1..=c.d_y {
        out.push_str(&format!(",component_{j}"));
    }
    out.push('\n');
    for (t, p) in times.iter().zip(preds) {
        out.push_str(&t.to_string());
        push_row(&mut out, p);
    }
    Ok(out)
}

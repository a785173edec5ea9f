//! On-disk datasets: `units.jsonl` holds one unit per line (`null` for an
//! unobserved outcome, mask as 0/1) and `manifest.json` the generating
//! config, the split and the train-split normalization statistics.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use obsnode_core::data::{Dataset, Split, Trajectory};
use obsnode_core::train::NormStats;
use serde::{Deserialize, Serialize};

use crate::config::{to_pretty, SimulatorSpec, FORMAT_VERSION};
use crate::error::{CliError, Result};

pub const UNITS_FILE: &str = "units.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitRecord {
    pub unit_id: u64,
    pub times: Vec<f64>,
    pub y: Vec<Vec<Option<f64>>>,
    pub mask: Vec<Vec<u8>>,
    pub a: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latents: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confounders: Option<Vec<Vec<f64>>>,
}

impl UnitRecord {
    pub fn from_trajectory(u: &Trajectory) -> Self {
        UnitRecord {
            unit_id: u.unit_id,
            times: u.times.clone(),
            y: u.y
                .iter()
                .zip(&u.mask)
                .map(|(y, m)| y.iter().zip(m).map(|(&v, &o)| o.then_some(v)).collect())
                .collect(),
            mask: u.mask.iter().map(|m| m.iter().map(|&o| o as u8).collect()).collect(),
            a: u.a.clone(),
            latents: u.latents.clone(),
            confounders: u.confounders.clone(),
        }
    }

    pub fn into_trajectory(self) -> std::result::Result<Trajectory, String> {
        let id = self.unit_id;
        if self.y.len() != self.mask.len() {
            return Err(format!("unit {id}: y and mask lengths differ"));
        }
        let mut y = Vec::with_capacity(self.y.len());
        let mut mask = Vec::with_capacity(self.mask.len());
        for (k, (row, m)) in self.y.into_iter().zip(self.mask).enumerate() {
            if row.len() != m.len() {
                return Err(format!("unit {id}: y and mask row {k} differ in width"));
            }
            let mut yr = Vec::with_capacity(row.len());
            let mut mr = Vec::with_capacity(row.len());
            for (v, o) in row.into_iter().zip(m) {
                match (v, o) {
                    (Some(v), 1) => {
                        yr.push(v);
                        mr.push(true);
                    }
                    (None, 0) => {
                        yr.push(0.0);
                        mr.push(false);
                    }
                    _ => return Err(format!("unit {id}: row {k} mask disagrees with null outcomes")),
                }
            }
            y.push(yr);
            mask.push(mr);
        }
        Ok(Trajectory {
            unit_id: id,
            times: self.times,
            y,
            mask,
            a: self.a,
            latents: self.latents,
            confounders: self.confounders,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub simulator: SimulatorSpec,
    pub d_y: usize,
    pub d_a: usize,
    pub units: usize,
    /// Unit ids per split.
    pub splits: BTreeMap<String, Vec<u64>>,
    /// Per-component mean and standard deviation of the train split;
    /// absent when the train split cannot be normalized.
    pub norm_stats: Option<NormStats>,
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

fn parse_split(s: &str) -> Option<Split> {
    match s {
        "train" => Some(Split::Train),
        "val" => Some(Split::Val),
        "test" => Some(Split::Test),
        _ => None,
    }
}

pub fn manifest_for(data: &Dataset, seed: u64, simulator: SimulatorSpec) -> Manifest {
    let mut splits: BTreeMap<String, Vec<u64>> = ["train", "val", "test"]
        .iter()
        .map(|s| (s.to_string(), Vec::new()))
        .collect();
    for (u, s) in data.units.iter().zip(&data.splits) {
        splits.get_mut(split_name(*s)).expect("known split").push(u.unit_id);
    }
    Manifest {
        format_version: FORMAT_VERSION,
        seed,
        simulator,
        d_y: data.d_y,
        d_a: data.d_a,
        units: data.units.len(),
        splits,
        norm_stats: NormStats::fit(&data.split(Split::Train), data.d_y).ok(),
    }
}

pub fn write(dir: &Path, data: &Dataset, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    let mut lines = String::new();
    for u in &data.units {
        lines.push_str(&serde_json::to_string(&UnitRecord::from_trajectory(u)).expect("serializable"));
        lines.push('\n');
    }
    let path = dir.join(UNITS_FILE);
    fs::write(&path, lines).map_err(|e| CliError::write(&path, e))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, to_pretty(manifest)).map_err(|e| CliError::write(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::read(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    if m.format_version != FORMAT_VERSION {
        return Err(CliError::data(format!(
            "{}: unsupported format_version {}",
            path.display(),
            m.format_version
        )));
    }
    Ok(m)
}

/// Loads a dataset directory and checks it against its manifest.
pub fn read(dir: &Path) -> Result<(Dataset, Manifest)> {
    if !dir.is_dir() {
        return Err(CliError::usage(format!(
            "dataset directory {} does not exist",
            dir.display()
        )));
    }
    let manifest = read_manifest(dir)?;
    let path = dir.join(UNITS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::read(&path, e))?;
    let bad = |line: usize, msg: String| CliError::data(format!("{} line {line}: {msg}", path.display()));
    let mut units = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: UnitRecord = serde_json::from_str(line).map_err(|e| bad(i + 1, e.to_string()))?;
        units.push(rec.into_trajectory().map_err(|m| bad(i + 1, m))?);
    }
    let mut of_unit = BTreeMap::new();
    for (name, ids) in &manifest.splits {
        let split = parse_split(name).ok_or_else(|| CliError::data(format!("unknown split `{name}` in manifest")))?;
        for &id in ids {
            if of_unit.insert(id, split).is_some() {
                return Err(CliError::data(format!("unit {id} appears in more than one split")));
            }
        }
    }
    let splits = units
        .iter()
        .map(|u| {
            of_unit
                .get(&u.unit_id)
                .copied()
                .ok_or_else(|| CliError::data(format!("unit {} has no split in the manifest", u.unit_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    if units.len() != manifest.units || of_unit.len() != units.len() {
        return Err(CliError::data(format!(
            "manifest lists {} units, {} holds {}",
            manifest.units,
            UNITS_FILE,
            units.len()
        )));
    }
    let data = Dataset {
        d_y: manifest.d_y,
        d_a: manifest.d_a,
        units,
        splits,
    };
    data.validate().map_err(CliError::Data)?;
    Ok((data, manifest))
}

/// Numbers printed after simulating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub units: usize,
    /// Observed (unit, time, component) outcome entries.
    pub observations: usize,
    /// Share of records with any non-zero treatment component.
    pub treatment_frequency: f64,
    /// Spearman rank correlation between the first treatment component of
    /// a record and its first outcome component, over records where that
    /// is observed. Ranks rather than values: doses under a steep policy
    /// are heavy-tailed and a few extreme records would dominate.
    pub treatment_outcome_correlation: Option<f64>,
}

pub fn summarize(data: &Dataset) -> Summary {
    let mut records = 0usize;
    let mut treated = 0usize;
    let mut observations = 0usize;
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for u in &data.units {
        for k in 0..u.len() {
            records += 1;
            let t = u.a[k].iter().any(|&a| a != 0.0);
            treated += t as usize;
            observations += u.mask[k].iter().filter(|&&m| m).count();
            if u.mask[k][0] {
                pairs.push((u.a[k][0], u.y[k][0]));
            }
        }
    }
    Summary {
        units: data.units.len(),
        observations,
        treatment_frequency: treated as f64 / records.max(1) as f64,
        treatment_outcome_correlation: spearman(&pairs),
    }
}

/// Ranks starting at 1, ties sharing their mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut r = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let mean = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            r[i] = mean;
        }
        start = end;
    }
    r
}

fn spearman(pairs: &[(f64, f64)]) -> Option<f64> {
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let ranked: Vec<(f64, f64)> = ranks(&xs).into_iter().zip(ranks(&ys)).collect();
    pearson(&ranked)
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len() as f64;
    if pairs.len() < 2 {
        return None;
    }
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

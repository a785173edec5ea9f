//! Run configuration files.
//!
//! Every command reads one JSON file with unknown keys rejected and a
//! `format_version` that must be 1. Relative paths are taken relative to the
//! working directory. A run's single `seed` lives at the top level; the
//! simulator and training sections must not repeat it.

use std::fs;
use std::path::{Path, PathBuf};

use obsnode_core::obsnode::ObsNodeConfig;
use obsnode_core::simulate::{CancerSimConfig, SemiSynthConfig};
use obsnode_core::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Parses a config file, reporting JSON and schema errors with their line.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    check_version(&value, path)?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn check_version(value: &Value, path: &Path) -> Result<()> {
    match value.get("format_version").and_then(Value::as_u64) {
        Some(v) if v == FORMAT_VERSION as u64 => Ok(()),
        Some(v) => Err(CliError::usage(format!(
            "{}: unsupported format_version {v} (expected {FORMAT_VERSION})",
            path.display()
        ))),
        None => Err(CliError::usage(format!(
            "{}: missing integer format_version",
            path.display()
        ))),
    }
}

/// Deserializes `section` with `seed` filled in from the top level.
pub fn seeded<T: DeserializeOwned>(section: &Value, seed: u64, what: &str) -> Result<T> {
    let mut obj = section
        .as_object()
        .cloned()
        .ok_or_else(|| CliError::usage(format!("{what} must be an object")))?;
    if obj.contains_key("seed") {
        return Err(CliError::usage(format!(
            "{what} must not set `seed`; use the top-level seed"
        )));
    }
    obj.insert("seed".into(), Value::from(seed));
    serde_json::from_value(Value::Object(obj)).map_err(|e| CliError::usage(format!("{what}: {e}")))
}

/// Serializes a resolved section back without its seed.
pub fn unseeded<T: Serialize>(section: &T) -> Value {
    let mut v = serde_json::to_value(section).expect("config sections serialize");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("seed");
    }
    v
}

pub fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SimulatorSpec {
    Cancer(Value),
    SemiSynthetic(Value),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Simulator {
    Cancer(CancerSimConfig),
    SemiSynthetic(SemiSynthConfig),
}

impl Simulator {
    pub fn spec(&self) -> SimulatorSpec {
        match self {
            Simulator::Cancer(c) => SimulatorSpec::Cancer(unseeded(c)),
            Simulator::SemiSynthetic(c) => SimulatorSpec::SemiSynthetic(unseeded(c)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub format_version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub simulator: SimulatorSpec,
}

impl SimulateConfig {
    pub fn simulator(&self) -> Result<Simulator> {
        Ok(match &self.simulator {
            SimulatorSpec::Cancer(v) => Simulator::Cancer(seeded(v, self.seed, "simulator.cancer")?),
            SimulatorSpec::SemiSynthetic(v) => {
                Simulator::SemiSynthetic(seeded(v, self.seed, "simulator.semi_synthetic")?)
            }
        })
    }

    /// The config with every default filled in.
    pub fn resolved(&self) -> Result<SimulateConfig> {
        Ok(SimulateConfig {
            simulator: self.simulator()?.spec(),
            ..self.clone()
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub format_version: u32,
    pub seed: u64,
    pub dataset_dir: PathBuf,
    pub run_dir: PathBuf,
    /// A previous run directory to continue from: its best checkpoint is the
    /// starting point and its metrics are carried over.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume_from: Option<PathBuf>,
    pub model: ObsNodeConfig,
    /// Training settings; every time is in dataset units.
    pub train: Value,
}

impl TrainRunConfig {
    pub fn train_config(&self) -> Result<TrainConfig> {
        seeded(&self.train, self.seed, "train")
    }

    pub fn resolved(&self) -> Result<TrainRunConfig> {
        Ok(TrainRunConfig {
            train: unseeded(&self.train_config()?),
            ..self.clone()
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapConfig {
    /// RMSE mapped to the darkest shade; larger values saturate.
    pub cap: f64,
    /// Pixels per grid cell.
    #[serde(default = "default_cell")]
    pub cell: usize,
}

fn default_cell() -> usize {
    8
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Val,
    #[default]
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub format_version: u32,
    pub dataset_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub output_dir: PathBuf,
    pub assimilation_times: Vec<f64>,
    pub horizons: Vec<f64>,
    #[serde(default)]
    pub split: EvalSplit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<HeatmapConfig>,
    /// Also write every per-unit prediction behind the grid.
    #[serde(default)]
    pub predictions: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub format_version: u32,
    pub seed: u64,
    pub instances: usize,
    pub queries_per_instance: usize,
    /// Largest accepted |adjustment − truth| on observable instances.
    pub max_deviation: f64,
    /// Largest accepted observational TV between the witness models.
    pub witness_max_observational_tv: f64,
    /// Smallest accepted interventional TV between the witness models.
    pub witness_min_interventional_tv: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            format_version: FORMAT_VERSION,
            seed: 0,
            instances: 200,
            queries_per_instance: 6,
            max_deviation: 1e-10,
            witness_max_observational_tv: 1e-12,
            witness_min_interventional_tv: 0.05,
        }
    }
}

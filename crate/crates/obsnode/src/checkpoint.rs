//! Model checkpoints: the architecture, normalization statistics and every
//! parameter tensor in one JSON object. Values are written with 17
//! significant digits so a load reproduces the saved model bit for bit.

use std::fs;
use std::path::Path;

use obsnode_core::autodiff::{TensorRecord, CHECKPOINT_FORMAT_VERSION};
use obsnode_core::obsnode::{ObsNode, ObsNodeConfig, ENCODER_CELL};
use obsnode_core::train::NormStats;
use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{CliError, Result};

#[derive(Serialize)]
struct TensorOut<'a> {
    name: &'a str,
    shape: &'a [usize],
    #[serde(serialize_with = "sci17")]
    values: &'a [f64],
}

fn sci17<S: Serializer>(values: &&[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(values.len()))?;
    for v in values.iter() {
        let raw = RawValue::from_string(format!("{v:.16e}")).map_err(serde::ser::Error::custom)?;
        seq.serialize_element(&raw)?;
    }
    seq.end()
}

#[derive(Serialize)]
struct CheckpointOut<'a> {
    format_version: u32,
    encoder_cell: &'a str,
    config: &'a ObsNodeConfig,
    norm_stats: &'a NormStats,
    tensors: Vec<TensorOut<'a>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointIn {
    format_version: u32,
    encoder_cell: String,
    config: ObsNodeConfig,
    norm_stats: NormStats,
    tensors: Vec<TensorRecord>,
}

pub fn to_json(model: &ObsNode, stats: &NormStats) -> String {
    let records: Vec<_> = model.store.iter().collect();
    let out = CheckpointOut {
        format_version: CHECKPOINT_FORMAT_VERSION,
        encoder_cell: ENCODER_CELL,
        config: model.config(),
        norm_stats: stats,
        tensors: records
            .iter()
            .map(|p| TensorOut {
                name: &p.name,
                shape: p.value.shape(),
                values: p.value.values(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string(&out).expect("serializable");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> std::result::Result<(ObsNode, NormStats), String> {
    let c: CheckpointIn = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if c.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(format!("unsupported checkpoint format_version {}", c.format_version));
    }
    if c.encoder_cell != ENCODER_CELL {
        return Err(format!("unsupported encoder cell `{}`", c.encoder_cell));
    }
    if c.norm_stats.mean.len() != c.config.d_y || c.norm_stats.std.len() != c.config.d_y {
        return Err("norm_stats width differs from d_y".into());
    }
    let mut model = ObsNode::zeros(c.config).map_err(|e| e.to_string())?;
    model.store.load_records(&c.tensors).map_err(|e| e.to_string())?;
    Ok((model, c.norm_stats))
}

pub fn save(path: &Path, model: &ObsNode, stats: &NormStats) -> Result<()> {
    fs::write(path, to_json(model, stats)).map_err(|e| CliError::write(path, e))
}

pub fn load(path: &Path) -> Result<(ObsNode, NormStats)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    from_json(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

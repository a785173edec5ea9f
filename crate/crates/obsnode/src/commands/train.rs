use std::fs;
use std::path::Path;

use obsnode_core::data::Split;
use obsnode_core::obsnode::ObsNode;
use obsnode_core::simulate::unit_rng;
use obsnode_core::train::{self as core_train, EpochMetrics, NormStats, TrainOutcome};

use super::{write_file, CONFIG_FILE};
use crate::checkpoint;
use crate::config::{to_pretty, TrainRunConfig};
use crate::dataset;
use crate::error::{CliError, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
const METRICS_HEADER: &str = "epoch,train_loss,val_loss";

fn metrics_row(m: &EpochMetrics) -> String {
    format!("{},{},{}\n", m.epoch, m.train_loss, m.val_loss)
}

pub fn write_metrics(history: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in history {
        out.push_str(&metrics_row(m));
    }
    out
}

/// Reads a run's `metrics.csv`. Skipped-batch counts are not stored and
/// come back as 0.
pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    if header.iter().collect::<Vec<_>>().join(",") != METRICS_HEADER {
        return Err(CliError::data(format!(
            "{}: header must be `{METRICS_HEADER}`",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let bad = |msg: String| CliError::data(format!("{} line {}: {msg}", path.display(), i + 2));
        let row = row.map_err(|e| bad(e.to_string()))?;
        let num = |k: usize| row[k].parse::<f64>().map_err(|e| bad(format!("column {}: {e}", k + 1)));
        let epoch = row[0].parse::<usize>().map_err(|e| bad(format!("epoch: {e}")))?;
        if epoch != out.len() + 1 {
            return Err(bad(format!("expected epoch {}", out.len() + 1)));
        }
        out.push(EpochMetrics {
            epoch,
            train_loss: num(1)?,
            val_loss: num(2)?,
            skipped_batches: 0,
        });
    }
    Ok(out)
}

/// Trains (or continues training) a model and writes the run directory:
/// the resolved config, per-epoch metrics and the best checkpoint.
pub fn train(cfg: &TrainRunConfig, on_epoch: &mut dyn FnMut(&EpochMetrics)) -> Result<TrainOutcome> {
    let resolved = cfg.resolved()?;
    let tc = cfg.train_config()?;
    tc.validate()?;
    let (data, _) = dataset::read(&cfg.dataset_dir)?;
    if data.d_y != cfg.model.d_y || data.d_a != cfg.model.d_a {
        return Err(CliError::usage(format!(
            "model expects d_y = {}, d_a = {}; dataset has {} and {}",
            cfg.model.d_y, cfg.model.d_a, data.d_y, data.d_a
        )));
    }
    let stats = NormStats::fit(&data.split(Split::Train), data.d_y)?;
    let normalized = stats.apply(&data);

    let (model, previous) = match &cfg.resume_from {
        Some(dir) => {
            let (model, saved) = checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
            if model.config() != &cfg.model {
                return Err(CliError::usage(format!(
                    "model section differs from the checkpoint in {}",
                    dir.display()
                )));
            }
            if saved != stats {
                return Err(CliError::data(format!(
                    "normalization of {} differs from the run in {}",
                    cfg.dataset_dir.display(),
                    dir.display()
                )));
            }
            (model, read_metrics(&dir.join(METRICS_FILE))?)
        }
        None => (
            ObsNode::init(cfg.model.clone(), &mut unit_rng(cfg.seed, 0))?,
            Vec::new(),
        ),
    };

    let dir = &cfg.run_dir;
    write_file(&dir.join(CONFIG_FILE), to_pretty(&resolved))?;
    let metrics_path = dir.join(METRICS_FILE);
    let mut metrics = write_metrics(&previous);
    write_file(&metrics_path, &metrics)?;
    let mut write_err = None;
    let outcome = core_train::train(model, &normalized, &tc, &previous, &mut |m| {
        metrics.push_str(&metrics_row(m));
        if let Err(e) = fs::write(&metrics_path, &metrics) {
            write_err.get_or_insert(CliError::write(&metrics_path, e));
        }
        on_epoch(m);
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    checkpoint::save(&dir.join(CHECKPOINT_FILE), &outcome.model, &stats)?;
    Ok(outcome)
}

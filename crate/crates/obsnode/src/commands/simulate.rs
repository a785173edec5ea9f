use obsnode_core::simulate::{generate_cancer_dataset, generate_semi_synthetic};

use super::{write_file, CONFIG_FILE};
use crate::config::{to_pretty, SimulateConfig, Simulator};
use crate::dataset::{self, Summary};
use crate::error::Result;

pub const SUMMARY_FILE: &str = "summary.json";

/// Generates a dataset into `output_dir` and returns its summary.
pub fn simulate(cfg: &SimulateConfig) -> Result<Summary> {
    let resolved = cfg.resolved()?;
    let data = match cfg.simulator()? {
        Simulator::Cancer(c) => generate_cancer_dataset(&c)?,
        Simulator::SemiSynthetic(c) => generate_semi_synthetic(&c)?,
    };
    let manifest = dataset::manifest_for(&data, cfg.seed, resolved.simulator.clone());
    dataset::write(&cfg.output_dir, &data, &manifest)?;
    let summary = dataset::summarize(&data);
    write_file(&cfg.output_dir.join(CONFIG_FILE), to_pretty(&resolved))?;
    write_file(&cfg.output_dir.join(SUMMARY_FILE), to_pretty(&summary))?;
    Ok(summary)
}

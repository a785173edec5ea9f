//! File formats and subcommands of the `obsnode` command-line tool.
//!
//! Datasets are JSON lines plus a manifest, checkpoints are single JSON
//! objects, grids and forecasts are CSV. Every command is deterministic:
//! rerunning it on the same inputs rewrites byte-identical files.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;

pub use error::{CliError, Result};

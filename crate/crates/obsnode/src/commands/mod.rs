//! One function per subcommand. Each is a pure function of its config and
//! input files; nothing time- or machine-dependent reaches the outputs.

mod evaluate;
mod forecast;
mod gradcheck;
mod simulate;
mod train;
mod verify;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub use evaluate::{evaluate, EvaluateOutput, PREDICTIONS_FILE, RMSE_FILE, RMSE_MEAN_FILE};
pub use forecast::{forecast, parse_treatment, treatment_csv, ForecastRequest, QueryTimes};
pub use gradcheck::{check_network, gradcheck, GradcheckReport};
pub use simulate::{simulate, SUMMARY_FILE};
pub use train::{read_metrics, train, write_metrics, CHECKPOINT_FILE, METRICS_FILE};
pub use verify::{verify_identification, VerifyReport};

use crate::error::{CliError, Result};

pub const CONFIG_FILE: &str = "config.json";

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::write(path, e))
}

/// CSV cells for a row of floats, shortest round-trip decimal.
pub(crate) fn push_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    for v in values {
        let _ = write!(out, ",{v}");
    }
    out.push('\n');
}

/// Size of the worker pool: `OBSNODE_THREADS`, default 1.
pub fn thread_count() -> Result<usize> {
    match std::env::var("OBSNODE_THREADS") {
        Err(_) => Ok(1),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::usage(format!(
                "OBSNODE_THREADS must be a positive integer, got `{s}`"
            ))),
        },
    }
}

pub(crate) fn pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start worker pool: {e}")))
}

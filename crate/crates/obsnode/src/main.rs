use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use obsnode::commands::{self, ForecastRequest, QueryTimes};
use obsnode::config::{self, to_pretty, EvaluateConfig, SimulateConfig, TrainRunConfig, VerifyConfig};
use obsnode::{dataset, CliError, Result};

/// Observable neural ODE forecasting under hypothetical treatments.
#[derive(Parser)]
#[command(name = "obsnode", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a model and write a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint over decision times and horizons.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Forecast one unit under a treatment path.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        unit: u64,
        /// CSV `start_time,component_1,…`; defaults to the recorded treatments.
        #[arg(long)]
        treatment: Option<PathBuf>,
        /// Decision time, in dataset time units.
        #[arg(long)]
        t_c: f64,
        /// Forecast at the unit's record times in (t_c, t_c + horizon].
        #[arg(long, conflicts_with = "times", required_unless_present = "times")]
        horizon: Option<f64>,
        /// Explicit comma-separated forecast times.
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a unit's recorded treatments as a treatment-path CSV.
    Treatment {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        unit: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check the adjustment formula on random finite models and the
    /// non-observable witness; writes a JSON report.
    VerifyIdentification {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare reverse-mode gradients with finite differences on random
    /// small networks.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        networks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::write(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config } => {
            let cfg: SimulateConfig = config::load(&config)?;
            let s = commands::simulate(&cfg)?;
            println!("units: {}", s.units);
            println!("observations: {}", s.observations);
            println!("treatment frequency: {}", s.treatment_frequency);
            match s.treatment_outcome_correlation {
                Some(r) => println!("treatment-outcome correlation: {r}"),
                None => println!("treatment-outcome correlation: undefined"),
            }
        }
        Command::Train { config } => {
            let cfg: TrainRunConfig = config::load(&config)?;
            let out = commands::train(&cfg, &mut |m| {
                eprintln!(
                    "epoch {}: train {:.6} val {:.6} skipped {}",
                    m.epoch, m.train_loss, m.val_loss, m.skipped_batches
                )
            })?;
            match out.best_epoch {
                Some(e) => println!("best epoch: {e}"),
                None => println!("best epoch: none (initial parameters kept)"),
            }
            println!("run directory: {}", cfg.run_dir.display());
        }
        Command::Evaluate { config } => {
            let cfg: EvaluateConfig = config::load(&config)?;
            let out = commands::evaluate(&cfg)?;
            print!("{}", out.mean.to_csv());
        }
        Command::Forecast {
            checkpoint,
            dataset,
            unit,
            treatment,
            t_c,
            horizon,
            times,
            output,
        } => {
            let query = match (horizon, times) {
                (Some(h), _) => QueryTimes::Horizon(h),
                (None, Some(ts)) => QueryTimes::Times(ts),
                (None, None) => unreachable!("clap requires one of --horizon and --times"),
            };
            let req = ForecastRequest {
                checkpoint,
                dataset_dir: dataset,
                unit_id: unit,
                treatment,
                t_c,
                query,
            };
            emit(output.as_deref(), &commands::forecast(&req)?)?;
        }
        Command::Treatment { dataset, unit, output } => {
            let (data, _) = dataset::read(&dataset)?;
            let u = data
                .unit(unit)
                .ok_or_else(|| CliError::data(format!("unit {unit} is not in {}", dataset.display())))?;
            emit(output.as_deref(), &commands::treatment_csv(u))?;
        }
        Command::VerifyIdentification { config, output } => {
            let cfg: VerifyConfig = match config {
                Some(p) => config::load(&p)?,
                None => VerifyConfig::default(),
            };
            let report = commands::verify_identification(&cfg)?;
            emit(output.as_deref(), &to_pretty(&report))?;
            eprintln!(
                "max deviation {:e}, witness TV observational {:e} / interventional {}: {}",
                report.max_deviation,
                report.witness.observational_tv,
                report.witness.interventional_tv,
                if report.passed { "pass" } else { "FAIL" }
            );
            if !report.passed {
                return Err(CliError::Numeric("identification checks failed".into()));
            }
        }
        Command::Gradcheck {
            networks,
            seed,
            tolerance,
        } => {
            let r = commands::gradcheck(networks, seed, tolerance)?;
            let verdict = if r.failures == 0 { "pass" } else { "FAIL" };
            println!(
                "gradcheck: {}/{} networks within {:e}, max rel err {:e}: {verdict}",
                r.networks - r.failures,
                r.networks,
                r.tolerance,
                r.max_error
            );
            if r.failures > 0 {
                return Err(CliError::Numeric(format!(
                    "{} networks failed the gradient check",
                    r.failures
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

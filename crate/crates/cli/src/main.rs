//! Batch command-line pipeline: cluster, fit, evaluate, simulate, report.
//!
//! Every command is a pure function of (config, inputs, seed): outputs land
//! only under the configured output directory and are byte-stable for fixed
//! inputs. Exit codes: 0 success, 1 usage, 2 data error, 3 numerical
//! failure.

mod commands;
mod config;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Overrides;

#[derive(Parser)]
#[command(
    name = "minch",
    version,
    about = "Block-structured Hawkes modeling of directed event streams",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition nodes into spectral communities, hub blocks, and an
    /// inactive block; write the assignment and activity tables.
    Cluster {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fit block-pair Hawkes parameters on the train split and persist the
    /// model with its fit report and parameter matrices.
    Fit {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a fitted model on the held-out window, or fit-and-compare the
    /// configured variant against the hubless baseline.
    Evaluate {
        #[command(flatten)]
        overrides: Overrides,
        /// Fitted model file to score.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Fit both the configured and the baseline (no hubs, no inactive
        /// block) variants and compare them on the identical test set.
        #[arg(long, conflicts_with = "model")]
        compare: bool,
        /// Re-score the model on its own train window (consistency check
        /// against the fit report) instead of the test window.
        #[arg(long, conflicts_with = "compare")]
        train_window: bool,
    },
    /// Generate an event stream from a persisted model by exact thinning.
    Simulate {
        /// Model (spec) file to simulate from.
        #[arg(long)]
        model: PathBuf,
        /// Simulation horizon in model time units.
        #[arg(long)]
        horizon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Simulate even when the branching spectral radius is >= 1.
        #[arg(long)]
        force: bool,
    },
    /// Emit plot-ready aggregate tables (block-to-block counts, per-pair
    /// averages, outgoing totals, time-binned series) for a model and data.
    Report {
        #[command(flatten)]
        overrides: Overrides,
        /// Fitted model file supplying the block assignment.
        #[arg(long)]
        model: PathBuf,
        /// Number of time bins in the series table.
        #[arg(long, default_value_t = 50)]
        bins: usize,
    },
}

/// Command-level failure, partitioned by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration (exit 1).
    Usage(String),
    /// Missing or malformed inputs (exit 2).
    Data(String),
    /// Numerical failure or an explosive specification (exit 3).
    Numerical(String),
}

impl From<minch_core::Error> for CliError {
    fn from(err: minch_core::Error) -> Self {
        match err {
            minch_core::Error::Config(msg) => CliError::Usage(msg),
            minch_core::Error::Numerical(msg) => CliError::Numerical(msg),
            minch_core::Error::Unstable { .. } => CliError::Numerical(err.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap exits 2 by default; this pipeline reserves 2 for data
            // errors and reports usage problems as 1.
            let is_help = matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp
                    | clap::error::ErrorKind::DisplayVersion
                    | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            );
            let _ = err.print();
            return if is_help {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };

    let result = match cli.command {
        Command::Cluster { overrides } => commands::cluster(&overrides),
        Command::Fit { overrides } => commands::fit(&overrides),
        Command::Evaluate {
            overrides,
            model,
            compare,
            train_window,
        } => commands::evaluate(&overrides, model.as_deref(), compare, train_window),
        Command::Simulate {
            model,
            horizon,
            seed,
            out,
            force,
        } => commands::simulate(&model, horizon, seed, &out, force),
        Command::Report {
            overrides,
            model,
            bins,
        } => commands::report(&overrides, &model, bins),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("data error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical error: {msg}");
            ExitCode::from(3)
        }
    }
}

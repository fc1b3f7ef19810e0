//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by ingestion, clustering, fitting, simulation, and
/// evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// A malformed input row; `line` is the 1-based line number in the source.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// Structurally invalid data (bad horizons, inconsistent logs, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Invalid configuration or hyperparameters.
    #[error("config error: {0}")]
    Config(String),

    /// A numerical failure (non-finite likelihood, optimizer breakdown, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An explosive specification rejected by the stability gate.
    #[error("unstable specification: branching spectral radius {radius:.6} >= 1")]
    Unstable { radius: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

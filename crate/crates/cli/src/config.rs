//! Run configuration: a TOML file is the single source of truth and CLI
//! flags override its fields one-to-one, so every run is reproducible from
//! the (config, overrides) pair alone.

use std::path::{Path, PathBuf};

use minch_core::assignment::ClusteringConfig;
use minch_core::estimator::FitOptions;
use minch_core::events::{ParseFormat, TimeUnit};
use minch_core::kernel::KernelBank;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; every artifact lands under it.
    pub out: PathBuf,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub clustering: ClusteringSection,
    pub kernels: KernelSection,
    pub fit: FitSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub delimiter: String,
    pub has_header: bool,
    pub time_unit: TimeUnit,
    /// Optional horizon length in model units (after the shift to zero).
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringSection {
    pub k: usize,
    pub n_hubs: usize,
    pub inactive_quantile: Option<f64>,
    pub kmeans_restarts: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    /// Decay rates per model time unit; the default bank (two months, two
    /// weeks, half a day) applies when empty.
    pub betas: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            split: SplitConfig::default(),
            clustering: ClusteringSection::default(),
            kernels: KernelSection::default(),
            fit: FitSection::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            delimiter: ",".into(),
            has_header: false,
            time_unit: TimeUnit::Days,
            horizon: None,
        }
    }
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
        }
    }
}

impl Default for ClusteringSection {
    fn default() -> Self {
        Self {
            k: 2,
            n_hubs: 0,
            inactive_quantile: None,
            kmeans_restarts: 10,
        }
    }
}

impl Default for FitSection {
    fn default() -> Self {
        let defaults = FitOptions::default();
        Self {
            grad_tol: defaults.grad_tol,
            max_iters: defaults.max_iters,
        }
    }
}

/// CLI flags shared by the data-consuming subcommands; every field shadows
/// one config entry.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Path to the run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Event file with source,target,timestamp rows.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Column delimiter (single character).
    #[arg(long)]
    pub delimiter: Option<String>,
    /// Input rows start with a header line.
    #[arg(long)]
    pub header: bool,
    /// Timestamp unit: seconds, days, or raw.
    #[arg(long)]
    pub time_unit: Option<String>,
    /// Observation horizon length in model units.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Number of spectral communities.
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of hub nodes isolated into singleton blocks.
    #[arg(long)]
    pub n_hubs: Option<usize>,
    /// Activity quantile pooled into the inactive block.
    #[arg(long)]
    pub inactive_quantile: Option<f64>,
    /// Comma-separated kernel decay rates (per model time unit).
    #[arg(long)]
    pub betas: Option<String>,
    /// Fraction of the horizon used for training.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    /// Loads the config named by the overrides (or defaults) and applies the
    /// flag overrides on top.
    pub fn resolve(overrides: &Overrides) -> Result<Self, CliError> {
        let mut config = match &overrides.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        if let Some(data) = &overrides.data {
            config.data.path = Some(data.clone());
        }
        if let Some(delimiter) = &overrides.delimiter {
            config.data.delimiter = delimiter.clone();
        }
        if overrides.header {
            config.data.has_header = true;
        }
        if let Some(unit) = &overrides.time_unit {
            config.data.time_unit = unit.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
        }
        if let Some(horizon) = overrides.horizon {
            config.data.horizon = Some(horizon);
        }
        if let Some(k) = overrides.k {
            config.clustering.k = k;
        }
        if let Some(n_hubs) = overrides.n_hubs {
            config.clustering.n_hubs = n_hubs;
        }
        if let Some(q) = overrides.inactive_quantile {
            config.clustering.inactive_quantile = Some(q);
        }
        if let Some(betas) = &overrides.betas {
            config.kernels.betas = betas
                .split(',')
                .map(|b| {
                    b.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::Usage(format!("invalid beta {b:?}")))
                })
                .collect::<Result<_, _>>()?;
        }
        if let Some(fraction) = overrides.train_fraction {
            config.split.train_fraction = fraction;
        }
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(out) = &overrides.out {
            config.out = out.clone();
        }
        Ok(config)
    }

    pub fn parse_format(&self) -> Result<ParseFormat, CliError> {
        let bytes = self.data.delimiter.as_bytes();
        if bytes.len() != 1 {
            return Err(CliError::Usage(format!(
                "delimiter must be a single character, got {:?}",
                self.data.delimiter
            )));
        }
        Ok(ParseFormat {
            delimiter: bytes[0],
            has_header: self.data.has_header,
            time_unit: self.data.time_unit,
            horizon: self.data.horizon,
        })
    }

    pub fn data_path(&self) -> Result<&Path, CliError> {
        self.data
            .path
            .as_deref()
            .ok_or_else(|| CliError::Usage("no data file given (--data or data.path)".into()))
    }

    pub fn kernel_bank(&self) -> Result<KernelBank, CliError> {
        if self.kernels.betas.is_empty() {
            Ok(KernelBank::default_bank())
        } else {
            KernelBank::from_rates(&self.kernels.betas).map_err(CliError::from)
        }
    }

    pub fn clustering_config(&self) -> ClusteringConfig {
        ClusteringConfig {
            k: self.clustering.k,
            n_hubs: self.clustering.n_hubs,
            inactive_quantile: self.clustering.inactive_quantile,
            seed: self.seed,
            kmeans_restarts: self.clustering.kmeans_restarts,
        }
    }

    pub fn fit_options(&self) -> Result<FitOptions, CliError> {
        Ok(FitOptions {
            clustering: self.clustering_config(),
            bank: self.kernel_bank()?,
            grad_tol: self.fit.grad_tol,
            max_iters: self.fit.max_iters,
        })
    }

    /// Baseline variant: hubs and the inactive block disabled.
    pub fn baseline_fit_options(&self) -> Result<FitOptions, CliError> {
        let mut options = self.fit_options()?;
        options.clustering.n_hubs = 0;
        options.clustering.inactive_quantile = None;
        Ok(options)
    }
}

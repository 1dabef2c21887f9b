//! Run configuration: an optional JSON file overlaid by command-line flags.

use clap::Args;
use pdisc::pipeline::Regime;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::CliError;

/// Every field is optional; commands apply their own defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walk_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retries: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Sweep: number of consecutive seeds starting at `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<u64>,
    /// Sweep: aspect ratios to cover.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
}

/// Flags shared by every subcommand; any flag given overrides the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Flags {
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub kappa: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub kappa0: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Row count; defaults to round(alpha * n).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub direction_seed: Option<u64>,
    #[arg(long)]
    pub walk_seed: Option<u64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// One of neg, zero005, zero010, pos, proportional.
    #[arg(long)]
    pub regime: Option<Regime>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub retries: Option<usize>,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with any of the fields above.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sweep worker threads.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Sweep: number of consecutive seeds.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Sweep: comma-separated aspect ratios.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("malformed config {}: {e}", path.display())))
    }

    /// The config file (if any) with every given flag applied on top.
    pub fn resolve(flags: &Flags) -> Result<RunConfig, CliError> {
        let mut c = match &flags.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! overlay {
            ($($f:ident),*) => { $( if flags.$f.is_some() { c.$f = flags.$f.clone(); } )* };
        }
        overlay!(alpha, kappa, kappa0, n, m, seed, direction_seed, walk_seed, delta, gamma, regime, rounds, retries, out, workers, seeds, alphas);
        Ok(c)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn need_n(&self) -> Result<usize, CliError> {
        self.n.ok_or_else(|| CliError::usage("--n is required".into()))
    }

    pub fn need_alpha(&self) -> Result<f64, CliError> {
        self.alpha.ok_or_else(|| CliError::usage("--alpha is required".into()))
    }

    /// `--m`, else `round(alpha * n)`.
    pub fn rows(&self, n: usize) -> Result<usize, CliError> {
        match (self.m, self.alpha) {
            (Some(m), _) => Ok(m),
            (None, Some(a)) => Ok((a * n as f64).round() as usize),
            (None, None) => Err(CliError::usage("either --m or --alpha is required".into())),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

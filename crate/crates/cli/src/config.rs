//! Resolved run configurations. Each subcommand reads an optional JSON
//! config file, applies command-line overrides on top and writes the result
//! next to its outputs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use phylo_nbe::model::{BtuConfig, PredConfig, TrainConfig};
use phylo_nbe::sim::{PriorConfig, SimLimits, SimModel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// Write `cfg` as pretty JSON to `dir/name` and return the SHA-256 of that
/// text.
pub fn write_resolved<T: Serialize>(cfg: &T, dir: &Path, name: &str) -> Result<String> {
    let text = serde_json::to_string_pretty(cfg)? + "\n";
    std::fs::write(dir.join(name), &text).with_context(|| format!("writing {name}"))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

pub fn require<T>(value: Option<T>, name: &str) -> Result<T> {
    match value {
        Some(v) => Ok(v),
        None => bail!("`{name}` is required (flag or config file)"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub measurements_per_record: usize,
    pub model: SimModel,
    pub prior: PriorConfig,
    pub limits: SimLimits,
    pub max_rejections: usize,
    /// When set, only summarise this many prior draws.
    pub prior_draws: Option<usize>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            out: None,
            seed: None,
            n_train: 2000,
            n_val: 200,
            n_test: 200,
            measurements_per_record: 10,
            model: SimModel::Standard,
            prior: PriorConfig::default(),
            limits: SimLimits::default(),
            max_rejections: 10_000,
            prior_draws: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Seeds both the parameter initialisation and training.
    pub seed: Option<u64>,
    pub btu: BtuConfig,
    pub pred: PredConfig,
    pub training: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneRunConfig {
    pub init: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub training: TrainConfig,
}

impl Default for FinetuneRunConfig {
    fn default() -> Self {
        FinetuneRunConfig {
            init: None,
            train: None,
            val: None,
            out: None,
            seed: 0,
            training: TrainConfig::fine_tune(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub checkpoint: Option<PathBuf>,
    pub newick: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Rate of becoming uninfectious, per day.
    pub sigma: Option<f64>,
    /// Days before the most recent sample.
    pub times: Vec<f64>,
    pub taus: Vec<f64>,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            checkpoint: None,
            newick: None,
            out: None,
            sigma: None,
            times: vec![0.0],
            taus: vec![0.025, 0.5, 0.975],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub checkpoint: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Score a predictor that knows the truth instead of a checkpoint.
    pub oracle: bool,
    pub oracle_delta: f64,
    pub strict: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            checkpoint: None,
            test: None,
            out: None,
            oracle: false,
            oracle_delta: 0.1,
            strict: false,
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamWConfig;

/// Shape of the tree embedding network `g: R^(2n+2) -> R^n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BtuConfig {
    pub embedding_dim: usize,
    pub hidden_depth: usize,
    pub hidden_width: usize,
}

impl Default for BtuConfig {
    fn default() -> Self {
        BtuConfig {
            embedding_dim: 50,
            hidden_depth: 2,
            hidden_width: 64,
        }
    }
}

impl BtuConfig {
    pub fn dims(&self) -> Vec<usize> {
        let n = self.embedding_dim;
        let mut dims = vec![2 * n + 2];
        dims.extend(std::iter::repeat_n(self.hidden_width, self.hidden_depth));
        dims.push(n);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(Error::InvalidArgument("embedding_dim must be at least 2".into()));
        }
        if self.hidden_depth > 0 && self.hidden_width == 0 {
            return Err(Error::InvalidArgument("btu hidden_width must be positive".into()));
        }
        Ok(())
    }
}

/// Shape of the prediction network `h: R^(n+4) -> R^3`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredConfig {
    pub hidden_depth: usize,
    pub hidden_width: usize,
}

impl Default for PredConfig {
    fn default() -> Self {
        PredConfig {
            hidden_depth: 3,
            hidden_width: 128,
        }
    }
}

impl PredConfig {
    pub fn dims(&self, embedding_dim: usize) -> Vec<usize> {
        let mut dims = vec![embedding_dim + 4];
        dims.extend(std::iter::repeat_n(self.hidden_width, self.hidden_depth));
        dims.push(3);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_depth > 0 && self.hidden_width == 0 {
            return Err(Error::InvalidArgument("pred hidden_width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Full,
    /// Only the prediction network is updated; the embedding network is
    /// frozen and run without dropout.
    PredictionUnitOnly,
}

/// How the quantile levels of a training batch are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauSampling {
    /// One level per record per batch.
    #[default]
    PerRecord,
    /// One level shared by the whole batch.
    PerBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Measurements used per record (J). Records must carry at least this many.
    pub measurements_per_sim: usize,
    pub epochs: usize,
    pub tau_alpha: f64,
    pub tau_beta: f64,
    pub tau_sampling: TauSampling,
    pub dropout: f64,
    pub optimizer: AdamWConfig,
    pub mode: TrainMode,
    /// Standardise the scalar inputs of the prediction network using
    /// training-set statistics. Only applied when training in full mode.
    pub standardize_inputs: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            measurements_per_sim: 10,
            epochs: 250,
            tau_alpha: 0.5,
            tau_beta: 0.5,
            tau_sampling: TauSampling::PerRecord,
            dropout: 0.1,
            optimizer: AdamWConfig::default(),
            mode: TrainMode::Full,
            standardize_inputs: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults for fine-tuning the prediction network.
    pub fn fine_tune() -> Self {
        TrainConfig {
            epochs: 50,
            mode: TrainMode::PredictionUnitOnly,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.measurements_per_sim == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, measurements_per_sim and epochs must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.tau_alpha > 0.0 && self.tau_beta > 0.0) {
            return Err(Error::InvalidArgument("tau prior parameters must be positive".into()));
        }
        Ok(())
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::adam::AdamConfig;

/// When the top-k graph is rebuilt from the embeddings during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphRefresh {
    #[default]
    PerEpoch,
    PerBatch,
}

impl std::str::FromStr for GraphRefresh {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-epoch" => Ok(Self::PerEpoch),
            "per-batch" => Ok(Self::PerBatch),
            other => Err(Error::Config(format!(
                "graph_refresh must be per-epoch or per-batch, got {other:?}"
            ))),
        }
    }
}

/// Neighbors per node when `k` is not configured, capped at `N - 1`.
pub const DEFAULT_K: usize = 6;

/// Training hyperparameters. Unknown keys in a JSON config are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub window: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// `None` selects `min(DEFAULT_K, N - 1)`.
    pub k: Option<usize>,
    pub seed: u64,
    pub graph_refresh: GraphRefresh,
    pub symmetric_graph: bool,
    /// Train/validation/test fractions of the window sequence.
    pub split: [f64; 3],
    /// Global-norm gradient clipping threshold; off when `None`.
    pub clip_norm: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            embed_dim: 64,
            batch_size: 64,
            hidden: 128,
            dropout: 0.2,
            learning_rate: 0.001,
            window: 85,
            max_epochs: 200,
            patience: 10,
            k: None,
            seed: 0,
            graph_refresh: GraphRefresh::PerEpoch,
            symmetric_graph: false,
            split: [0.6, 0.2, 0.2],
            clip_norm: None,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("batch_size", self.batch_size),
            ("hidden", self.hidden),
            ("window", self.window),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }

    pub fn fractions(&self) -> (f64, f64, f64) {
        (self.split[0], self.split[1], self.split[2])
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn resolve_k(&self, num_nodes: usize) -> usize {
        self.k
            .unwrap_or_else(|| DEFAULT_K.min(num_nodes.saturating_sub(1)))
    }

    pub fn model_config(&self, num_nodes: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            num_nodes,
            embed_dim: self.embed_dim,
            window: self.window,
            hidden: self.hidden,
            k: self.resolve_k(num_nodes),
            dropout: self.dropout,
            symmetric_graph: self.symmetric_graph,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

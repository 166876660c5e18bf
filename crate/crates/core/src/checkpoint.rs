//! Versioned JSON checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{apply_normalizer, make_windows, NormalizationStats, ProcessDataset, WindowSample};
use crate::error::{Error, Result};
use crate::model::SoftSensor;
use crate::training::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "sensorgraph-checkpoint/1";

/// A trained model together with everything needed to feed it raw data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model: SoftSensor,
    /// Column of the predicted variable in the training data.
    pub target: usize,
    pub target_tag: String,
    /// Tags of every column of the training data, target included.
    pub variable_tags: Vec<String>,
    pub normalization: NormalizationStats,
    pub train_config: TrainConfig,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Probe {
            format: String,
        }
        let probe: Probe = serde_json::from_str(text)?;
        if probe.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(probe.format));
        }
        let ckpt: Self = serde_json::from_str(text)?;
        ckpt.model.config.validate()?;
        ckpt.model.params.check_shapes(&ckpt.model.config)?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Short content hash of the serialized checkpoint.
    pub fn id(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_json()?.as_bytes());
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }

    /// Tags of the input sensors, in node order.
    pub fn input_tags(&self) -> Vec<String> {
        self.variable_tags
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.target)
            .map(|(_, t)| t.clone())
            .collect()
    }

    /// Checks a raw dataset against the checkpoint's variable layout.
    pub fn check_dataset(&self, ds: &ProcessDataset) -> Result<()> {
        if ds.num_variables() != self.variable_tags.len() {
            return Err(Error::shape(
                "dataset variables",
                self.variable_tags.len(),
                ds.num_variables(),
            ));
        }
        Ok(())
    }

    /// Normalizes a raw dataset with the stored statistics and cuts it into
    /// windows.
    pub fn prepare(&self, ds: &ProcessDataset) -> Result<Vec<WindowSample>> {
        self.check_dataset(ds)?;
        let normalized = apply_normalizer(ds, &self.normalization)?;
        make_windows(&normalized, self.target, self.model.config.window)
    }

    pub fn denormalize_target(&self, v: f64) -> f64 {
        self.normalization.denormalize(self.target, v)
    }
}

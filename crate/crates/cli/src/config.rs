//! Pipeline configuration file shared by every stage.
//!
//! ```toml
//! [data]
//! n = 2000
//! resolution = [64, 32]
//!
//! [model]
//! base_width = 16
//! resolution = [64, 32]
//!
//! [train]
//! epochs = 40
//! tv_lambda = 0.01
//!
//! [embedding]
//! epochs = 10
//!
//! [predictor]
//! epochs = 12
//! ```
//!
//! Every section and key is optional. JSON with the same shape is accepted
//! for files ending in `.json`.

use std::path::Path;

use anyhow::{Context, Result};
use filmedgan::eval::PredictorConfig;
use filmedgan::models::ModelConfig;
use filmedgan::text::EmbeddingConfig;
use filmedgan::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub n: usize,
    pub resolution: (usize, usize),
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n: 2000, resolution: filmedgan::data::DEFAULT_RESOLUTION }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub embedding: EmbeddingConfig,
    pub predictor: PredictorConfig,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }

    /// Apply a `--seed` override to every seeded stage.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.train.seed = s;
            self.embedding.seed = s;
            self.predictor.seed = s;
        }
        self
    }
}

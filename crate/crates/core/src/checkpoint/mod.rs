//! Training checkpoints: parameter archives plus a JSON manifest.
//!
//! ```text
//! <dir>/manifest.json       {format, model, train, epoch, seed, history}
//! <dir>/generator.bin       parameter archive
//! <dir>/discriminator.bin   parameter archive
//! ```
//!
//! The embedding model (`embedding.bin`, `vocab.json`) and attribute
//! predictor (`predictor.bin`) may share the directory.

pub mod archive;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Discriminator, Generator, ModelConfig};
use crate::train::{EpochMetrics, TrainConfig};

pub const CHECKPOINT_FORMAT: &str = "filmedgan-checkpoint/1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    seed: u64,
    history: Vec<EpochMetrics>,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        archive::save(&self.generator, &dir.join("generator.bin"))?;
        archive::save(&self.discriminator, &dir.join("discriminator.bin"))?;
        let manifest = Manifest {
            format: CHECKPOINT_FORMAT.into(),
            model: self.model.clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            seed: self.train.seed,
            history: self.history.clone(),
        };
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format("manifest", e))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format("checkpoint manifest", e))?;
        if m.format != CHECKPOINT_FORMAT {
            return Err(Error::format(
                "checkpoint manifest",
                format!("unsupported format {:?}", m.format),
            ));
        }
        let mut generator = Generator::new(&m.model, 0)?;
        archive::load_into(&mut generator, &dir.join("generator.bin"))?;
        let mut discriminator = Discriminator::new(&m.model, 0)?;
        archive::load_into(&mut discriminator, &dir.join("discriminator.bin"))?;
        Ok(Self {
            model: m.model,
            train: m.train,
            epoch: m.epoch,
            history: m.history,
            generator,
            discriminator,
        })
    }
}

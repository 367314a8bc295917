use std::path::Path;

use filmedgan::checkpoint::Checkpoint;
use filmedgan::data::{generate_synthetic, save_synthetic, DatasetSplit};
use filmedgan::eval::{AttributePredictor, PredictorConfig};
use filmedgan::models::{Discriminator, Generator, ModelConfig};
use filmedgan::text::{train_embedding, EmbeddingConfig};
use filmedgan::train::TrainConfig;

pub const RES: (usize, usize) = (32, 16);

/// Untrained but complete checkpoint directory plus its dataset.
pub fn tiny_checkpoint(dir: &Path) -> DatasetSplit {
    let data = generate_synthetic(20, 4, RES).unwrap();
    save_synthetic(&data, 4, &dir.join("data")).unwrap();
    let ckpt_dir = dir.join("ckpt");
    let emb = train_embedding(&data.train, &EmbeddingConfig { epochs: 0, ..Default::default() }, |_, _| {}).unwrap();
    emb.save(&ckpt_dir).unwrap();
    let model = ModelConfig { base_width: 2, resolution: RES, ..Default::default() };
    Checkpoint {
        model: model.clone(),
        train: TrainConfig::default(),
        epoch: 0,
        history: vec![],
        generator: Generator::new(&model, 1).unwrap(),
        discriminator: Discriminator::new(&model, 2).unwrap(),
    }
    .save(&ckpt_dir)
    .unwrap();
    AttributePredictor::new(data.schema.clone(), PredictorConfig { width: 4, feature_dim: 8, ..Default::default() })
        .unwrap()
        .save(&ckpt_dir)
        .unwrap();
    data
}

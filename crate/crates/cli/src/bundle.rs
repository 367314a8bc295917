//! Everything inference needs, loaded once from a checkpoint directory.

use std::path::Path;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use filmedgan::checkpoint::{archive, Checkpoint};
use filmedgan::data::SLOTS;
use filmedgan::eval::AttributePredictor;
use filmedgan::film::{FeatureMap, ImageTensor};
use filmedgan::models::{Generator, ModelConfig};
use filmedgan::tensor::Matrix;
use filmedgan::text::EmbeddingModel;
use serde::Serialize;

pub struct Bundle {
    pub checkpoint_id: String,
    pub model: ModelConfig,
    pub generator: Generator<f32>,
    pub embedding: EmbeddingModel,
    pub predictor: Option<AttributePredictor>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Timings {
    pub embed_ms: f64,
    pub generate_ms: f64,
    pub attention_ms: f64,
    pub predict_ms: f64,
}

pub struct EditOutput {
    pub image: ImageTensor,
    /// One map per residual block, values in [0, 1].
    pub attention: Vec<FeatureMap<f32>>,
    /// Slot name → predicted value, when a predictor is available.
    pub attributes: Option<Vec<(String, String)>>,
    pub timings: Timings,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

impl Bundle {
    /// Load generator, embedding model and (if present) attribute predictor.
    pub fn load(dir: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
        let embedding = EmbeddingModel::load(dir).with_context(|| format!("loading embedding model from {}", dir.display()))?;
        let predictor = if dir.join("predictor.json").exists() {
            Some(AttributePredictor::load(dir)?)
        } else {
            None
        };
        Ok(Self {
            checkpoint_id: format!("{:016x}", archive::digest(&ckpt.generator)),
            model: ckpt.model,
            generator: ckpt.generator,
            embedding,
            predictor,
        })
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.model.resolution
    }

    pub fn embed(&self, text: &str) -> Result<Matrix<f32>> {
        Ok(self.embedding.encode_texts(&[text])?)
    }

    /// Edit one image (already at model resolution) to match `text`.
    pub fn edit(&self, image: &ImageTensor, text: &str) -> Result<EditOutput> {
        let (h, w) = self.resolution();
        ensure!(
            (image.c, image.h, image.w) == (3, h, w),
            "image is {}x{}x{}, model expects 3x{h}x{w}",
            image.c,
            image.h,
            image.w
        );
        let mut timings = Timings::default();
        let t = Instant::now();
        let emb = self.embed(text)?;
        timings.embed_ms = ms(t);

        let t = Instant::now();
        let edited = self.generator.generate(std::slice::from_ref(image), &emb)?.remove(0);
        timings.generate_ms = ms(t);

        let t = Instant::now();
        let attention = self
            .generator
            .attention_maps(&FeatureMap::stack(std::slice::from_ref(image))?, &emb)?
            .remove(0);
        timings.attention_ms = ms(t);

        let t = Instant::now();
        let attributes = match &self.predictor {
            Some(p) => {
                let labels = p.predict(std::slice::from_ref(&edited))?[0];
                Some(
                    (0..4)
                        .map(|slot| {
                            let value = p.schema.name(slot, labels.0[slot]).unwrap_or("?").to_string();
                            (SLOTS[slot].to_string(), value)
                        })
                        .collect(),
                )
            }
            None => None,
        };
        timings.predict_ms = ms(t);
        Ok(EditOutput { image: edited, attention, attributes, timings })
    }
}

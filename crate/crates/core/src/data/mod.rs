//! Captioned outfit datasets: the procedural synthetic set and the real
//! Fashion Synthesis layout.

pub mod attributes;
mod fashion;
mod store;
pub mod synthetic;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use attributes::{
    caption_of, caption_of_labels, parse_caption, AttributeSchema, Attributes, Category, Color,
    Gender, Labels, Sleeve, SLOTS,
};
pub use fashion::{collapse_to_synthetic, load_fashion_synthesis, EXPECTED_LAYOUT};
pub use store::{load_dataset, load_synthetic, save_synthetic, SyntheticManifest};
pub use synthetic::{body_seed, render, Body, Garment};

use crate::error::{Error, Result};
use crate::exec;
use crate::film::ImageTensor;

/// Default model resolution (height, width).
pub const DEFAULT_RESOLUTION: (usize, usize) = (128, 64);

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionedSample {
    pub id: usize,
    pub image: ImageTensor,
    pub caption: String,
    pub labels: Labels,
    /// Garment mask (synthetic data only).
    pub mask: Option<Vec<bool>>,
    /// Body seed the sprite was rendered from (synthetic data only).
    pub body_seed: Option<u64>,
}

impl CaptionedSample {
    /// Typed attributes under the synthetic schema.
    pub fn attributes(&self) -> Result<Attributes> {
        Attributes::from_labels(&self.labels)
    }

    /// Re-render this sample's body wearing a different garment, returning
    /// the image and garment mask. Only available for synthetic samples.
    pub fn render_with(&self, garment: &Garment) -> Option<(ImageTensor, Vec<bool>)> {
        let gender = self.attributes().ok()?.gender;
        self.render_as(gender, garment)
    }

    /// Like [`render_with`](Self::render_with) with the body's gender swapped too.
    pub fn render_as(&self, gender: Gender, garment: &Garment) -> Option<(ImageTensor, Vec<bool>)> {
        let seed = self.body_seed?;
        Some(render(
            &Body::from_seed(seed, gender),
            garment,
            self.image.h,
            self.image.w,
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<CaptionedSample>,
    pub test: Vec<CaptionedSample>,
    pub schema: AttributeSchema,
    /// (height, width) of every image.
    pub resolution: (usize, usize),
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &CaptionedSample> {
        self.train.iter().chain(&self.test)
    }
}

/// Synthetic dataset identity, persisted alongside the images.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
}

/// Number of training samples for a synthetic set of `n` (90/10 split).
pub fn train_count(n: usize) -> usize {
    n * 9 / 10
}

/// Generate `n ≥ 10` sprites at `resolution`, split 90/10 train/test.
pub fn generate_synthetic(n: usize, seed: u64, resolution: (usize, usize)) -> Result<DatasetSplit> {
    if n < 10 {
        return Err(Error::validation(format!(
            "synthetic dataset needs at least 10 samples, got {n}"
        )));
    }
    let (h, w) = resolution;
    if h < 16 || w < 8 {
        return Err(Error::validation(format!("resolution {h}x{w} too small")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attrs = synthetic::balanced_attributes(n, &mut rng);
    let mut samples = exec::map_indices(n, |id| {
        let a = attrs[id];
        let bs = body_seed(seed, id);
        let (image, mask) = render(&Body::from_seed(bs, a.gender), &Garment::of(&a), h, w);
        CaptionedSample {
            id,
            image,
            caption: caption_of(&a),
            labels: a.labels(),
            mask: Some(mask),
            body_seed: Some(bs),
        }
    });
    let test = samples.split_off(train_count(n));
    Ok(DatasetSplit {
        train: samples,
        test,
        schema: AttributeSchema::synthetic(),
        resolution,
    })
}

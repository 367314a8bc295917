//! Attribute predictor: a small conv classifier with one softmax head per
//! attribute slot. Its penultimate layer doubles as the FID feature space.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::archive;
use crate::data::{AttributeSchema, CaptionedSample, Labels};
use crate::error::{Error, Result};
use crate::film::{FeatureMap, ImageTensor};
use crate::models::{Act, ConvUnit, UnitTrace};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, init_rng, param_name, relu, relu_backward, Adam,
    Linear, Mode, Module, Param,
};
use crate::tensor::Matrix;

pub const PREDICTOR_FORMAT: &str = "filmedgan-predictor/1";
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    /// Channels of the first conv stage (doubling up to 4×).
    pub width: usize,
    pub feature_dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self { width: 16, feature_dim: 64, lr: 0.002, batch_size: 32, epochs: 12, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributePredictor {
    pub schema: AttributeSchema,
    pub config: PredictorConfig,
    trunk: Vec<ConvUnit<f32>>,
    hidden: Linear<f32>,
    heads: Vec<Linear<f32>>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    schema: AttributeSchema,
    config: PredictorConfig,
}

struct Trace {
    units: Vec<UnitTrace<f32>>,
    pooled: Matrix<f32>,
    features: Matrix<f32>,
    logits: Vec<Matrix<f32>>,
}

/// Row-wise softmax.
pub fn softmax_rows(m: &Matrix<f32>) -> Vec<Vec<f64>> {
    (0..m.rows)
        .map(|r| {
            let row = m.row(r);
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let e: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

impl AttributePredictor {
    pub fn new(schema: AttributeSchema, config: PredictorConfig) -> Result<Self> {
        if config.width == 0 || config.feature_dim == 0 {
            return Err(Error::config("predictor width and feature_dim must be positive"));
        }
        let mut rng = init_rng(config.seed ^ 0xa77_2b);
        let w = config.width;
        let chans = [3, w, 2 * w, 4 * w, 4 * w];
        let trunk = (0..4)
            .map(|i| ConvUnit::new(chans[i], chans[i + 1], 3, (2, 2), true, Act::Relu, &mut rng))
            .collect();
        let hidden = Linear::new(4 * w, config.feature_dim, &mut rng);
        let heads = schema
            .cardinalities()
            .iter()
            .map(|&k| Linear::new(config.feature_dim, k, &mut rng))
            .collect();
        Ok(Self { schema, config, trunk, hidden, heads })
    }

    fn forward(&self, images: &[ImageTensor], mode: Mode) -> Result<Trace> {
        let mut x = FeatureMap::stack(images)?;
        let mut units = Vec::with_capacity(self.trunk.len());
        for u in &self.trunk {
            let t = u.forward(x, mode)?;
            x = t.y.clone();
            units.push(t);
        }
        let pooled = global_avg_pool(&x);
        let mut features = self.hidden.forward(&pooled)?;
        relu(&mut features.data);
        let logits = self.heads.iter().map(|h| h.forward(&features)).collect::<Result<_>>()?;
        Ok(Trace { units, pooled, features, logits })
    }

    /// Per-slot class posteriors, `[slot][sample][class]`.
    pub fn predict_proba(&self, images: &[ImageTensor]) -> Result<[Vec<Vec<f64>>; 4]> {
        let mut out: [Vec<Vec<f64>>; 4] = Default::default();
        for chunk in images.chunks(EVAL_CHUNK) {
            let t = self.forward(chunk, Mode::Eval)?;
            for (slot, l) in t.logits.iter().enumerate() {
                out[slot].extend(softmax_rows(l));
            }
        }
        Ok(out)
    }

    /// Most probable label per slot.
    pub fn predict(&self, images: &[ImageTensor]) -> Result<Vec<Labels>> {
        let p = self.predict_proba(images)?;
        Ok((0..images.len())
            .map(|i| Labels(std::array::from_fn(|slot| argmax(&p[slot][i]))))
            .collect())
    }

    /// Joint posterior over all attribute combinations (product of the slot
    /// posteriors), one row per image.
    pub fn joint_proba(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>> {
        let p = self.predict_proba(images)?;
        Ok((0..images.len())
            .map(|i| {
                let mut joint = vec![1.0];
                for slot in &p {
                    joint = joint.iter().flat_map(|&a| slot[i].iter().map(move |&b| a * b)).collect();
                }
                let s: f64 = joint.iter().sum();
                joint.into_iter().map(|v| v / s).collect()
            })
            .collect())
    }

    /// Penultimate-layer activations.
    pub fn features(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EVAL_CHUNK) {
            let t = self.forward(chunk, Mode::Eval)?;
            out.extend((0..t.features.rows).map(|r| t.features.row(r).iter().map(|&v| v as f64).collect()));
        }
        Ok(out)
    }

    /// Stable identifier of the feature extractor: architecture plus a hash
    /// of every parameter value.
    pub fn extractor_id(&self) -> String {
        let h = archive::digest(self);
        format!("attr-predictor-w{}-f{}-{h:016x}", self.config.width, self.config.feature_dim)
    }

    /// Sum of the four cross-entropies, averaged over the batch.
    fn train_step(&mut self, images: &[ImageTensor], labels: &[Labels], opt: &mut Adam<f32>) -> Result<f64> {
        let t = self.forward(images, Mode::Train)?;
        let n = images.len();
        self.zero_grad();
        let mut loss = 0.0;
        let mut dfeat = Matrix::zeros(n, self.config.feature_dim);
        for (slot, head) in self.heads.iter_mut().enumerate() {
            let probs = softmax_rows(&t.logits[slot]);
            let mut dlogit = Matrix::zeros(n, head.out_dim);
            for (i, p) in probs.iter().enumerate() {
                let y = labels[i].0[slot];
                loss -= p[y].max(1e-12).ln();
                for (k, d) in dlogit.row_mut(i).iter_mut().enumerate() {
                    *d = ((p[k] - if k == y { 1.0 } else { 0.0 }) / n as f64) as f32;
                }
            }
            let d = head.backward(&t.features, &dlogit);
            dfeat.data.iter_mut().zip(&d.data).for_each(|(a, b)| *a += b);
        }
        relu_backward(&t.features.data, &mut dfeat.data);
        let dpool = self.hidden.backward(&t.pooled, &dfeat);
        let last = &t.units.last().expect("trunk").y;
        let mut dx = global_avg_pool_backward(&dpool, last.h, last.w);
        for (u, tr) in self.trunk.iter_mut().zip(&t.units).rev() {
            dx = u.backward(tr, dx);
        }
        for (u, tr) in self.trunk.iter_mut().zip(&t.units) {
            u.commit(tr);
        }
        opt.step(self);
        Ok(loss / n as f64)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        archive::save(self, &dir.join("predictor.bin"))?;
        let m = Manifest { format: PREDICTOR_FORMAT.into(), schema: self.schema.clone(), config: self.config.clone() };
        let path = dir.join("predictor.json");
        let json = serde_json::to_vec_pretty(&m).map_err(|e| Error::format("predictor manifest", e))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("predictor.json");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::format("predictor manifest", e))?;
        if m.format != PREDICTOR_FORMAT {
            return Err(Error::format("predictor manifest", format!("unknown format {:?}", m.format)));
        }
        let mut p = Self::new(m.schema, m.config)?;
        archive::load_into(&mut p, &dir.join("predictor.bin"))?;
        Ok(p)
    }
}

impl Module<f32> for AttributePredictor {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<f32>)) {
        for (i, u) in self.trunk.iter().enumerate() {
            u.visit(&param_name(prefix, &format!("trunk{i}")), f);
        }
        self.hidden.visit(&param_name(prefix, "hidden"), f);
        for (i, h) in self.heads.iter().enumerate() {
            h.visit(&param_name(prefix, &format!("head{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f32>)) {
        for (i, u) in self.trunk.iter_mut().enumerate() {
            u.visit_mut(&param_name(prefix, &format!("trunk{i}")), f);
        }
        self.hidden.visit_mut(&param_name(prefix, "hidden"), f);
        for (i, h) in self.heads.iter_mut().enumerate() {
            h.visit_mut(&param_name(prefix, &format!("head{i}")), f);
        }
    }
}

pub fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Train a predictor on labelled images.
pub fn train_predictor(
    samples: &[CaptionedSample],
    schema: &AttributeSchema,
    config: &PredictorConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<AttributePredictor> {
    if samples.len() < 2 {
        return Err(Error::validation("predictor training needs at least 2 samples"));
    }
    if config.batch_size < 2 {
        return Err(Error::config("predictor batch size must be at least 2"));
    }
    for s in samples {
        schema.check(&s.labels)?;
    }
    let mut model = AttributePredictor::new(schema.clone(), config.clone())?;
    let mut opt = Adam::new(config.lr, 0.9, 0.999, 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e3d);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0);
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let images: Vec<ImageTensor> = chunk.iter().map(|&i| samples[i].image.clone()).collect();
            let labels: Vec<Labels> = chunk.iter().map(|&i| samples[i].labels).collect();
            total += model.train_step(&images, &labels, &mut opt)?;
            batches += 1;
        }
        on_epoch(epoch, total / batches.max(1) as f64);
    }
    Ok(model)
}

//! Adversarial training with matching, mismatching and relevant captions.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::CaptionedSample;
use crate::error::{Error, Result};
use crate::film::{tv_penalty, tv_penalty_batch, FeatureMap, ImageTensor};
use crate::models::{Discriminator, Generator};
use crate::nn::{Adam, Mode, Module};
use crate::tensor::Matrix;
use crate::text::EmbeddingModel;

/// Scores are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const CLAMP_EPS: f64 = 1e-7;
const MISMATCH_DRAWS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay_gamma: f64,
    pub lr_decay_period: usize,
    pub tv_lambda: f64,
    pub seed: u64,
    /// Emit a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            epochs: 125,
            lr_decay_gamma: 0.5,
            lr_decay_period: 100,
            tv_lambda: 0.01,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("eps", self.eps),
            ("lr_decay_gamma", self.lr_decay_gamma),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::config("Adam betas must be below 1"));
        }
        if self.batch_size == 0 || self.lr_decay_period == 0 {
            return Err(Error::config("batch_size and lr_decay_period must be positive"));
        }
        if !(self.tv_lambda >= 0.0) {
            return Err(Error::config(format!("tv_lambda must be >= 0, got {}", self.tv_lambda)));
        }
        Ok(())
    }

    /// Read a `.toml` or `.json` file; missing keys take their defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Step schedule: `lr · gamma^⌊epoch / period⌋`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr * cfg.lr_decay_gamma.powi((epoch / cfg.lr_decay_period.max(1)) as i32)
}

/// Sample indices of the three caption roles for one training image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TextTriplet {
    pub matching: usize,
    pub mismatching: usize,
    pub relevant: usize,
    /// No attribute-differing sample was found; `mismatching` is just another sample.
    pub fallback: bool,
}

fn other_index(n: usize, i: usize, rng: &mut ChaCha8Rng) -> usize {
    let j = rng.gen_range(0..n - 1);
    if j >= i {
        j + 1
    } else {
        j
    }
}

pub fn sample_triplet(samples: &[CaptionedSample], index: usize, rng: &mut ChaCha8Rng) -> Result<TextTriplet> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::validation("triplet sampling needs at least 2 samples"));
    }
    if index >= n {
        return Err(Error::validation(format!("index {index} out of range for {n} samples")));
    }
    let own = samples[index].labels;
    let mut mismatching = None;
    let mut last = index;
    for _ in 0..MISMATCH_DRAWS {
        last = other_index(n, index, rng);
        if samples[last].labels != own {
            mismatching = Some(last);
            break;
        }
    }
    let relevant = other_index(n, index, rng);
    Ok(TextTriplet {
        matching: index,
        mismatching: mismatching.unwrap_or(last),
        relevant,
        fallback: mismatching.is_none(),
    })
}

fn clamp(s: f64) -> f64 {
    s.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
}

/// `log D(x,t) + log(1 − D(x,t̂)) + log(1 − D(G(x,t̄),t̄))`; the discriminator
/// maximizes it.
pub fn discriminator_objective(real_match: f64, real_mismatch: f64, fake: f64) -> f64 {
    clamp(real_match).ln() + (1.0 - clamp(real_mismatch)).ln() + (1.0 - clamp(fake)).ln()
}

/// `−log D(G(x,t̄),t̄) + λ·tv`, minimized by the generator.
pub fn generator_objective_tv(d_fake: f64, tv: f64, tv_lambda: f64) -> f64 {
    -clamp(d_fake).ln() + tv_lambda * tv
}

pub fn generator_objective(d_fake: f64, fake: &ImageTensor, tv_lambda: f64) -> f64 {
    generator_objective_tv(d_fake, tv_penalty(fake) as f64, tv_lambda)
}

/// One row of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    #[serde(rename = "loss_D")]
    pub loss_d: f64,
    #[serde(rename = "loss_G")]
    pub loss_g: f64,
    /// Weighted TV term `λ·TV` of the generator loss.
    pub tv_term: f64,
    pub d_real_match: f64,
    pub d_real_mismatch: f64,
    pub d_fake: f64,
    pub mismatch_fallbacks: usize,
}

pub fn write_metrics_csv(history: &[EpochMetrics], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format("metrics csv", e))?;
    for m in history {
        w.serialize(m).map_err(|e| Error::format("metrics csv", e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Training stopped early; carries the last checkpoint whose weights were finite.
#[derive(Debug)]
pub struct TrainingAborted {
    pub error: Error,
    pub last_good: Option<Box<Checkpoint>>,
}

impl fmt::Display for TrainingAborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.last_good {
            Some(c) => write!(f, "{} (last good checkpoint: epoch {})", self.error, c.epoch),
            None => write!(f, "{}", self.error),
        }
    }
}

impl std::error::Error for TrainingAborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<TrainingAborted> for Error {
    fn from(a: TrainingAborted) -> Self {
        a.error
    }
}

/// Train with captions embedded once by the frozen `embedder`.
pub fn fit(
    samples: &[CaptionedSample],
    embedder: &EmbeddingModel,
    generator: Generator<f32>,
    discriminator: Discriminator<f32>,
    cfg: &TrainConfig,
    on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<Checkpoint, TrainingAborted> {
    let abort = |error| TrainingAborted { error, last_good: None };
    let captions: Vec<&str> = samples.iter().map(|s| s.caption.as_str()).collect();
    let emb = embedder.encode_texts(&captions).map_err(abort)?;
    fit_embedded(samples, &emb, generator, discriminator, cfg, on_checkpoint)
}

/// Train with precomputed caption embeddings (`emb` row `i` ↔ `samples[i]`).
pub fn fit_embedded(
    samples: &[CaptionedSample],
    emb: &Matrix<f32>,
    generator: Generator<f32>,
    discriminator: Discriminator<f32>,
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<Checkpoint, TrainingAborted> {
    let abort = |error| TrainingAborted { error, last_good: None };
    cfg.validate().map_err(abort)?;
    if samples.len() < 2 {
        return Err(abort(Error::validation("GAN training needs at least 2 samples")));
    }
    if emb.rows != samples.len() || emb.cols != generator.config.embed_dim {
        return Err(abort(Error::shape(format!(
            "{} samples but embeddings are {}x{}",
            samples.len(),
            emb.rows,
            emb.cols
        ))));
    }
    let mut state = Checkpoint {
        model: generator.config.clone(),
        train: cfg.clone(),
        epoch: 0,
        history: Vec::new(),
        generator,
        discriminator,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt_g = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut opt_d = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut last_good = state.clone();

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        opt_g.lr = lr;
        opt_d.lr = lr;
        order.shuffle(&mut rng);
        let mut acc = Accum::default();
        for chunk in order.chunks(cfg.batch_size) {
            let step = train_batch(&mut state, samples, emb, chunk, cfg, &mut rng, &mut opt_g, &mut opt_d);
            match step {
                Ok(s) => acc.add(&s, chunk.len()),
                Err(error) => {
                    return Err(TrainingAborted {
                        error,
                        last_good: Some(Box::new(last_good)),
                    })
                }
            }
        }
        state.epoch = epoch + 1;
        state.history.push(acc.finish(epoch, lr));
        last_good = state.clone();
        let due = cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0;
        if due && state.epoch < cfg.epochs {
            on_checkpoint(&state).map_err(|error| TrainingAborted {
                error,
                last_good: Some(Box::new(last_good.clone())),
            })?;
        }
    }
    on_checkpoint(&state).map_err(|error| TrainingAborted {
        error,
        last_good: Some(Box::new(last_good)),
    })?;
    Ok(state)
}

struct StepStats {
    loss_d: f64,
    loss_g: f64,
    tv_term: f64,
    d_real_match: f64,
    d_real_mismatch: f64,
    d_fake: f64,
    fallbacks: usize,
}

#[derive(Default)]
struct Accum {
    n: usize,
    loss_d: f64,
    loss_g: f64,
    tv_term: f64,
    d_real_match: f64,
    d_real_mismatch: f64,
    d_fake: f64,
    fallbacks: usize,
}

impl Accum {
    fn add(&mut self, s: &StepStats, n: usize) {
        let w = n as f64;
        self.n += n;
        self.loss_d += s.loss_d * w;
        self.loss_g += s.loss_g * w;
        self.tv_term += s.tv_term * w;
        self.d_real_match += s.d_real_match * w;
        self.d_real_mismatch += s.d_real_mismatch * w;
        self.d_fake += s.d_fake * w;
        self.fallbacks += s.fallbacks;
    }

    fn finish(self, epoch: usize, lr: f64) -> EpochMetrics {
        let n = self.n.max(1) as f64;
        EpochMetrics {
            epoch,
            lr,
            loss_d: self.loss_d / n,
            loss_g: self.loss_g / n,
            tv_term: self.tv_term / n,
            d_real_match: self.d_real_match / n,
            d_real_mismatch: self.d_real_mismatch / n,
            d_fake: self.d_fake / n,
            mismatch_fallbacks: self.fallbacks,
        }
    }
}

fn mean(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64).sum::<f64>() / v.len().max(1) as f64
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    state: &mut Checkpoint,
    samples: &[CaptionedSample],
    emb: &Matrix<f32>,
    chunk: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    opt_g: &mut Adam<f32>,
    opt_d: &mut Adam<f32>,
) -> Result<StepStats> {
    let n = chunk.len();
    let triplets = chunk
        .iter()
        .map(|&i| sample_triplet(samples, i, rng))
        .collect::<Result<Vec<_>>>()?;
    let images: Vec<ImageTensor> = chunk.iter().map(|&i| samples[i].image.clone()).collect();
    let x = FeatureMap::stack(&images)?;
    let rows = |f: fn(&TextTriplet) -> usize| emb.select_rows(&triplets.iter().map(f).collect::<Vec<_>>());
    let h_match = rows(|t| t.matching);
    let h_mis = rows(|t| t.mismatching);
    let h_rel = rows(|t| t.relevant);
    let (g, d) = (&mut state.generator, &mut state.discriminator);

    let (fake, g_trace) = g.forward(&x, &h_rel, Mode::Train)?;
    g.commit(&g_trace);

    // Discriminator step on the negated objective. For s = σ(l):
    // d(−log s)/dl = s − 1 and d(−log(1 − s))/dl = s.
    let inv_n = 1.0 / n as f32;
    let (s_rm, t_rm) = d.forward(&x, &h_match, Mode::Train)?;
    let (s_mm, t_mm) = d.forward(&x, &h_mis, Mode::Train)?;
    let (s_f, t_f) = d.forward(&fake, &h_rel, Mode::Train)?;
    let loss_d = -(0..n)
        .map(|k| discriminator_objective(s_rm[k] as f64, s_mm[k] as f64, s_f[k] as f64))
        .sum::<f64>()
        / n as f64;
    if !loss_d.is_finite() {
        return Err(Error::numeric("discriminator loss", format!("{loss_d}")));
    }
    let grad_real: Vec<f32> = s_rm.iter().map(|&s| (s - 1.0) * inv_n).collect();
    let grad_mis: Vec<f32> = s_mm.iter().map(|&s| s * inv_n).collect();
    let grad_fake: Vec<f32> = s_f.iter().map(|&s| s * inv_n).collect();
    d.backward(&t_rm, &grad_real);
    d.backward(&t_mm, &grad_mis);
    d.backward(&t_f, &grad_fake);
    for t in [&t_rm, &t_mm, &t_f] {
        d.commit(t);
    }
    opt_d.step(d);

    // Generator step against the updated discriminator, reusing the fake batch.
    let (s_g, t_g) = d.forward(&fake, &h_rel, Mode::Train)?;
    d.commit(&t_g);
    let (tv, tv_grad) = tv_penalty_batch(&fake);
    let lambda = cfg.tv_lambda as f32;
    let loss_g = -s_g.iter().map(|&s| clamp(s as f64).ln()).sum::<f64>() / n as f64 + cfg.tv_lambda * tv as f64;
    if !loss_g.is_finite() {
        return Err(Error::numeric("generator loss", format!("{loss_g}")));
    }
    let grad_g: Vec<f32> = s_g.iter().map(|&s| (s - 1.0) * inv_n).collect();
    let mut dfake = d.backward(&t_g, &grad_g);
    d.zero_grad();
    if lambda > 0.0 {
        dfake.data.iter_mut().zip(&tv_grad.data).for_each(|(a, &b)| *a += lambda * b);
    }
    g.backward(&g_trace, &dfake);
    opt_g.step(g);

    Ok(StepStats {
        loss_d,
        loss_g,
        tv_term: cfg.tv_lambda * tv as f64,
        d_real_match: mean(&s_rm),
        d_real_mismatch: mean(&s_mm),
        d_fake: mean(&s_f),
        fallbacks: triplets.iter().filter(|t| t.fallback).count(),
    })
}

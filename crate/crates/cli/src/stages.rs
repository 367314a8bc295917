//! One function per pipeline stage.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use filmedgan::checkpoint::Checkpoint;
use filmedgan::data::{generate_synthetic, load_dataset, save_synthetic, CaptionedSample, DatasetSplit};
use filmedgan::eval::{evaluate as run_evaluation, train_predictor, AttributePredictor, EvaluationReport};
use filmedgan::film::ImageTensor;
use filmedgan::imageio;
use filmedgan::models::{Discriminator, Generator};
use filmedgan::text::{train_embedding as fit_embedding, EmbeddingModel};
use filmedgan::train::{fit_embedded, write_metrics_csv};
use log::{info, warn};

use crate::bundle::Bundle;
use crate::config::PipelineConfig;
use crate::grid::{compose_grid, GridRow};

const EMBEDDING_FILES: [&str; 3] = ["embedding.bin", "embedding.json", "vocab.json"];

pub fn make_synthetic(cfg: &PipelineConfig, n: Option<usize>, seed: u64, out: &Path) -> Result<DatasetSplit> {
    let n = n.unwrap_or(cfg.data.n);
    let split = generate_synthetic(n, seed, cfg.data.resolution)?;
    save_synthetic(&split, seed, out)?;
    info!("wrote {} samples ({} train / {} test) to {}", n, split.train.len(), split.test.len(), out.display());
    Ok(split)
}

pub fn train_embedding(cfg: &PipelineConfig, dataset: &Path, out: &Path) -> Result<EmbeddingModel> {
    let data = load_dataset(dataset)?;
    let model = fit_embedding(&data.train, &cfg.embedding, |epoch, loss| {
        info!("embedding epoch {} loss {loss:.5}", epoch + 1)
    })?;
    if !data.test.is_empty() && data.test.len() >= 2 {
        info!("held-out ranking loss {:.5}", model.evaluate_loss(&data.test, cfg.embedding.batch_size, cfg.embedding.margin)?);
    }
    model.save(out)?;
    info!("saved embedding model to {}", out.display());
    Ok(model)
}

/// Train the GAN on `dataset` with the embedding model found in
/// `embedding_dir`. The checkpoint, metrics and a copy of the embedding model
/// go to `out`; an attribute predictor is trained alongside unless `out`
/// already has one.
pub fn train_gan(cfg: &PipelineConfig, dataset: &Path, embedding_dir: &Path, out: &Path) -> Result<Checkpoint> {
    let data = load_dataset(dataset)?;
    let embed = EmbeddingModel::load(embedding_dir)
        .with_context(|| format!("no embedding model in {} (run train-embedding first)", embedding_dir.display()))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    if !same_dir(embedding_dir, out) {
        for f in EMBEDDING_FILES {
            fs::copy(embedding_dir.join(f), out.join(f)).with_context(|| format!("copying {f}"))?;
        }
    }
    let mut model = cfg.model.clone();
    if model.resolution != data.resolution {
        warn!("model resolution {:?} replaced by dataset resolution {:?}", model.resolution, data.resolution);
        model.resolution = data.resolution;
    }
    let captions: Vec<&str> = data.train.iter().map(|s| s.caption.as_str()).collect();
    let h = embed.encode_texts(&captions)?;
    let g = Generator::new(&model, cfg.train.seed)?;
    let d = Discriminator::new(&model, cfg.train.seed.wrapping_add(1))?;
    let result = fit_embedded(&data.train, &h, g, d, &cfg.train, |ckpt| {
        if let Some(m) = ckpt.history.last() {
            info!(
                "epoch {} loss_D {:.4} loss_G {:.4} tv {:.5} D(real) {:.3} D(mismatch) {:.3} D(fake) {:.3}",
                m.epoch + 1, m.loss_d, m.loss_g, m.tv_term, m.d_real_match, m.d_real_mismatch, m.d_fake
            );
        }
        ckpt.save(out)?;
        write_metrics_csv(&ckpt.history, &out.join("metrics.csv"))
    });
    let ckpt = match result {
        Ok(c) => c,
        Err(aborted) => {
            if let Some(last) = &aborted.last_good {
                last.save(&out.join("last_good"))?;
                warn!("saved last good checkpoint (epoch {}) to {}", last.epoch, out.join("last_good").display());
            }
            return Err(anyhow::Error::new(aborted.error).context("GAN training aborted"));
        }
    };
    if !out.join("predictor.json").exists() {
        predictor_for(cfg, &data, out)?;
    }
    info!("checkpoint written to {}", out.display());
    Ok(ckpt)
}

/// Load the predictor saved in `dir`, or train one on `data` and save it there.
pub fn predictor_for(cfg: &PipelineConfig, data: &DatasetSplit, dir: &Path) -> Result<AttributePredictor> {
    if dir.join("predictor.json").exists() {
        return Ok(AttributePredictor::load(dir)?);
    }
    let p = train_predictor(&data.train, &data.schema, &cfg.predictor, |epoch, loss| {
        info!("predictor epoch {} loss {loss:.5}", epoch + 1)
    })?;
    p.save(dir)?;
    Ok(p)
}

pub fn evaluate(cfg: &PipelineConfig, checkpoint: &Path, dataset: &Path) -> Result<EvaluationReport> {
    let data = load_dataset(dataset)?;
    let bundle = Bundle::load(checkpoint)?;
    if data.resolution != bundle.resolution() {
        bail!("dataset resolution {:?} does not match checkpoint {:?}", data.resolution, bundle.resolution());
    }
    let predictor = match bundle.predictor {
        Some(p) => p,
        None => predictor_for(cfg, &data, checkpoint)?,
    };
    let captions: Vec<&str> = data.test.iter().map(|s| s.caption.as_str()).collect();
    let h = bundle.embedding.encode_texts(&captions)?;
    Ok(run_evaluation(&data.test, &bundle.generator, &h, &predictor)?)
}

/// `<out>` plus `<stem>_attention_<k>.png` for k = 1..4 next to it.
pub fn edit(checkpoint: &Path, image: &Path, text: &str, out: &Path) -> Result<Vec<PathBuf>> {
    let bundle = Bundle::load(checkpoint)?;
    let source = imageio::load_image(image, Some(bundle.resolution()))?;
    let result = bundle.edit(&source, text)?;
    imageio::save_png(&result.image, out)?;
    let mut written = vec![out.to_path_buf()];
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("edit");
    let dir = out.parent().unwrap_or(Path::new(""));
    for (k, map) in result.attention.iter().enumerate() {
        let path = dir.join(format!("{stem}_attention_{}.png", k + 1));
        imageio::write_file(&path, &imageio::encode_gray_png(&map.values, map.h, map.w)?)?;
        written.push(path);
    }
    if let Some(attrs) = &result.attributes {
        let s: Vec<String> = attrs.iter().map(|(k, v)| format!("{k}={v}")).collect();
        info!("predicted attributes: {}", s.join(" "));
    }
    Ok(written)
}

/// Source images for grids and galleries: the dataset's test split, or
/// fresh synthetic sprites when no dataset is given.
pub fn source_samples(dataset: Option<&Path>, n: usize, seed: u64, resolution: (usize, usize)) -> Result<Vec<CaptionedSample>> {
    let pool = match dataset {
        Some(d) => {
            let data = load_dataset(d)?;
            if data.resolution != resolution {
                bail!("dataset resolution {:?} does not match checkpoint {:?}", data.resolution, resolution);
            }
            if data.test.is_empty() { data.train } else { data.test }
        }
        None => generate_synthetic(n.max(10), seed, resolution)?.all().cloned().collect(),
    };
    Ok(pool.into_iter().take(n).collect())
}

/// Comparison sheet: one row per (source image, checkpoint), the source in
/// the first column and one edit per caption after it.
pub fn grid(checkpoints: &[PathBuf], texts: &[String], dataset: Option<&Path>, n: usize, seed: u64, out: &Path) -> Result<ImageTensor> {
    if checkpoints.is_empty() || texts.is_empty() {
        bail!("grid needs at least one --checkpoint and one --text");
    }
    let bundles = checkpoints.iter().map(|c| Bundle::load(c)).collect::<Result<Vec<_>>>()?;
    let res = bundles[0].resolution();
    if let Some(b) = bundles.iter().find(|b| b.resolution() != res) {
        bail!("checkpoints disagree on resolution: {:?} vs {:?}", res, b.resolution());
    }
    let sources = source_samples(dataset, n, seed, res)?;
    let mut rows = Vec::new();
    for s in &sources {
        for b in &bundles {
            let captions: Vec<&str> = texts.iter().map(String::as_str).collect();
            let h = b.embedding.encode_texts(&captions)?;
            let images = vec![s.image.clone(); texts.len()];
            rows.push(GridRow { source: s.image.clone(), edits: b.generator.generate(&images, &h)? });
        }
    }
    let sheet = compose_grid(&rows)?;
    imageio::save_png(&sheet, out)?;
    Ok(sheet)
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

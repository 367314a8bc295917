//! On-disk synthetic dataset:
//!
//! ```text
//! <dir>/manifest.json      {"format", "seed", "n", "resolution": [h, w], "train", "test"}
//! <dir>/labels.csv         id,caption,gender,sleeve,color,category
//! <dir>/images/NNNNN.png
//! <dir>/masks/NNNNN.png    garment mask, 0 or 255
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    body_seed, load_fashion_synthesis, train_count, AttributeSchema, CaptionedSample, DatasetSplit,
    Labels, SLOTS,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::imageio;

pub const SYNTHETIC_FORMAT: &str = "filmedgan-synthetic/1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub format: String,
    pub seed: u64,
    pub n: usize,
    pub resolution: [usize; 2],
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    id: usize,
    caption: String,
    gender: String,
    sleeve: String,
    color: String,
    category: String,
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub fn save_synthetic(split: &DatasetSplit, seed: u64, dir: &Path) -> Result<()> {
    mkdir(&dir.join("images"))?;
    mkdir(&dir.join("masks"))?;
    let samples: Vec<&CaptionedSample> = split.all().collect();
    let written = exec::map_indices(samples.len(), |i| -> Result<()> {
        let s = samples[i];
        imageio::write_file(
            &dir.join("images").join(format!("{:05}.png", s.id)),
            &imageio::encode_png(&s.image)?,
        )?;
        if let Some(mask) = &s.mask {
            let v: Vec<f32> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
            imageio::write_file(
                &dir.join("masks").join(format!("{:05}.png", s.id)),
                &imageio::encode_gray_png(&v, s.image.h, s.image.w)?,
            )?;
        }
        Ok(())
    });
    written.into_iter().collect::<Result<Vec<_>>>()?;

    let labels_path = dir.join("labels.csv");
    let mut w = csv::Writer::from_path(&labels_path).map_err(|e| Error::format("labels.csv", e))?;
    for s in split.all() {
        let name = |slot: usize| split.schema.name(slot, s.labels.0[slot]).unwrap_or("?").to_string();
        w.serialize(LabelRow {
            id: s.id,
            caption: s.caption.clone(),
            gender: name(0),
            sleeve: name(1),
            color: name(2),
            category: name(3),
        })
        .map_err(|e| Error::format("labels.csv", e))?;
    }
    w.flush().map_err(|e| Error::io(&labels_path, e))?;

    let manifest = SyntheticManifest {
        format: SYNTHETIC_FORMAT.to_string(),
        seed,
        n: split.len(),
        resolution: [split.resolution.0, split.resolution.1],
        train: split.train.len(),
        test: split.test.len(),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format("manifest", e))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn load_synthetic(dir: &Path) -> Result<DatasetSplit> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: SyntheticManifest =
        serde_json::from_str(&text).map_err(|e| Error::format("manifest.json", e))?;
    if manifest.format != SYNTHETIC_FORMAT {
        return Err(Error::format(
            "manifest.json",
            format!("unsupported format {:?}", manifest.format),
        ));
    }
    let schema = AttributeSchema::synthetic();
    let lpath = dir.join("labels.csv");
    let mut reader = csv::Reader::from_path(&lpath).map_err(|e| Error::format("labels.csv", e))?;
    let mut rows = Vec::new();
    for row in reader.deserialize::<LabelRow>() {
        rows.push(row.map_err(|e| Error::format("labels.csv", e))?);
    }
    if rows.len() != manifest.n {
        return Err(Error::format(
            "labels.csv",
            format!("{} rows but manifest lists {}", rows.len(), manifest.n),
        ));
    }
    let [h, w] = manifest.resolution;
    let loaded = exec::map_indices(rows.len(), |i| -> Result<CaptionedSample> {
        let r = &rows[i];
        let mut labels = [0; 4];
        for (slot, v) in [&r.gender, &r.sleeve, &r.color, &r.category].into_iter().enumerate() {
            labels[slot] = schema.label(slot, v)?;
        }
        let img_path = dir.join("images").join(format!("{:05}.png", r.id));
        let image = imageio::load_image(&img_path, Some((h, w)))?;
        let mask_path = dir.join("masks").join(format!("{:05}.png", r.id));
        let mask = match fs::read(&mask_path) {
            Ok(bytes) => Some(imageio::decode_gray_png(&bytes)?.0.iter().map(|&v| v > 0.5).collect()),
            Err(_) => None,
        };
        Ok(CaptionedSample {
            id: r.id,
            image,
            caption: r.caption.clone(),
            labels: Labels(labels),
            mask,
            body_seed: Some(body_seed(manifest.seed, r.id)),
        })
    });
    let mut samples = loaded.into_iter().collect::<Result<Vec<_>>>()?;
    samples.sort_by_key(|s| s.id);
    let cut = train_count(manifest.n).min(samples.len());
    let test = samples.split_off(cut);
    debug_assert_eq!(SLOTS.len(), 4);
    Ok(DatasetSplit {
        train: samples,
        test,
        schema,
        resolution: (h, w),
    })
}

/// Load either layout: a synthetic directory (has `manifest.json`) or a
/// Fashion Synthesis export.
pub fn load_dataset(dir: &Path) -> Result<DatasetSplit> {
    if dir.join("manifest.json").exists() {
        load_synthetic(dir)
    } else {
        load_fashion_synthesis(dir)
    }
}

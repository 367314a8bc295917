//! Loader for an export of the Fashion Synthesis benchmark.
//!
//! The original release ships MATLAB/HDF5 archives whose field names vary
//! between versions, so this loader reads a flat export instead; see
//! [`EXPECTED_LAYOUT`]. Segmentation maps are never read.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{AttributeSchema, Attributes, CaptionedSample, Category, Color, DatasetSplit, Labels, Sleeve, DEFAULT_RESOLUTION};
use crate::data::Gender;
use crate::error::{Error, Result};
use crate::exec;
use crate::imageio;

pub const EXPECTED_LAYOUT: &str = "\
<dir>/annotations.csv   header: id,image,caption,gender,sleeve,color,category
<dir>/images/<image>    one RGB image per row (any size; resized to 128x64)
<dir>/splits/train.txt  one id per line (70,000 in the official split)
<dir>/splits/test.txt   one id per line (8,979 in the official split)";

#[derive(Debug, Deserialize)]
struct Row {
    id: String,
    image: String,
    caption: String,
    gender: String,
    sleeve: String,
    color: String,
    category: String,
}

fn missing(dir: &Path, what: &str, source: std::io::Error) -> Error {
    Error::Io {
        path: dir.join(what),
        source: std::io::Error::new(
            source.kind(),
            format!("{source}; expected layout:\n{EXPECTED_LAYOUT}"),
        ),
    }
}

fn read_ids(dir: &Path, name: &str) -> Result<Vec<String>> {
    let path = dir.join("splits").join(name);
    let text = fs::read_to_string(&path).map_err(|e| missing(dir, &format!("splits/{name}"), e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Load the real dataset at the default resolution, keeping its full label
/// vocabulary (sorted distinct values per slot) and the provided split.
pub fn load_fashion_synthesis(dir: &Path) -> Result<DatasetSplit> {
    let ann = dir.join("annotations.csv");
    let file = fs::File::open(&ann).map_err(|e| missing(dir, "annotations.csv", e))?;
    let mut rows = Vec::new();
    for r in csv::Reader::from_reader(file).deserialize::<Row>() {
        rows.push(r.map_err(|e| Error::format("annotations.csv", e))?);
    }
    let train_ids = read_ids(dir, "train.txt")?;
    let test_ids = read_ids(dir, "test.txt")?;

    let mut vocab: [BTreeSet<String>; 4] = Default::default();
    for r in &rows {
        for (slot, v) in [&r.gender, &r.sleeve, &r.color, &r.category].into_iter().enumerate() {
            vocab[slot].insert(v.clone());
        }
    }
    let schema = AttributeSchema {
        values: vocab.map(|s| s.into_iter().collect()),
    };
    let by_id: HashMap<&str, (usize, &Row)> =
        rows.iter().enumerate().map(|(i, r)| (r.id.as_str(), (i, r))).collect();
    let (h, w) = DEFAULT_RESOLUTION;

    let load = |ids: &[String]| -> Result<Vec<CaptionedSample>> {
        let picked = ids
            .iter()
            .map(|id| {
                by_id.get(id.as_str()).copied().ok_or_else(|| {
                    Error::format("splits", format!("id {id:?} not in annotations.csv"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        exec::map_indices(picked.len(), |k| {
            let (idx, r) = picked[k];
            let mut labels = [0; 4];
            for (slot, v) in [&r.gender, &r.sleeve, &r.color, &r.category].into_iter().enumerate() {
                labels[slot] = schema.label(slot, v)?;
            }
            Ok(CaptionedSample {
                id: idx,
                image: imageio::load_image(&dir.join("images").join(&r.image), Some((h, w)))?,
                caption: r.caption.clone(),
                labels: Labels(labels),
                mask: None,
                body_seed: None,
            })
        })
        .into_iter()
        .collect()
    };
    let train = load(&train_ids)?;
    let test = load(&test_ids)?;
    Ok(DatasetSplit {
        train,
        test,
        schema,
        resolution: (h, w),
    })
}

/// Map a real label set onto the synthetic attribute slots, collapsing
/// categories and colors onto the nearest synthetic value.
pub fn collapse_to_synthetic(schema: &AttributeSchema, labels: &Labels) -> Option<Attributes> {
    let name = |slot| schema.name(slot, labels.0[slot]).map(str::to_lowercase);
    let gender = name(0)?;
    let gender = if gender.contains("female") || gender.contains("lady") || gender.contains("woman") {
        Gender::Lady
    } else {
        Gender::Man
    };
    let sleeve = name(1)?;
    let sleeve = if sleeve.contains("sleeveless") || sleeve.contains("no") {
        Sleeve::Sleeveless
    } else if sleeve.contains("short") {
        Sleeve::Short
    } else {
        Sleeve::Long
    };
    let color = name(2)?;
    let color = Color::ALL
        .iter()
        .copied()
        .find(|c| color.contains(c.name()))
        .or_else(|| match color.as_str() {
            c if c.contains("violet") || c.contains("magenta") => Some(Color::Purple),
            c if c.contains("navy") || c.contains("teal") => Some(Color::Blue),
            c if c.contains("brown") || c.contains("beige") => Some(Color::Orange),
            c if c.contains("rose") => Some(Color::Pink),
            _ => None,
        })?;
    let cat = name(3)?;
    let category = if cat.contains("dress") || cat.contains("skirt") {
        Category::Dress
    } else if cat.contains("romper") || cat.contains("jumpsuit") || cat.contains("short") {
        Category::Romper
    } else if cat.contains("tee") || cat.contains("t-shirt") || cat.contains("tank") {
        Category::TShirt
    } else {
        Category::Blouse
    };
    Some(Attributes { gender, sleeve, color, category })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::film::ImageTensor;

    #[test]
    fn empty_directory_is_an_io_error_listing_the_layout() {
        let tmp = tempfile::tempdir().unwrap();
        match load_fashion_synthesis(tmp.path()) {
            Err(Error::Io { source, .. }) => assert!(source.to_string().contains("annotations.csv")),
            other => panic!("expected I/O error, got {other:?}"),
        }
    }

    #[test]
    fn loads_export_with_split_and_full_labels() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        fs::create_dir_all(dir.join("images")).unwrap();
        fs::create_dir_all(dir.join("splits")).unwrap();
        let img = ImageTensor { c: 3, h: 20, w: 10, values: vec![0.5; 600] };
        let mut csv = String::from("id,image,caption,gender,sleeve,color,category\n");
        let colors = ["red", "navy", "multicolor"];
        for i in 0..3 {
            imageio::save_png(&img, &dir.join("images").join(format!("{i}.png"))).unwrap();
            csv.push_str(&format!(
                "s{i},{i}.png,the lady was wearing a {} top,female,short sleeve,{},jumpsuit\n",
                colors[i], colors[i]
            ));
        }
        fs::write(dir.join("annotations.csv"), csv).unwrap();
        fs::write(dir.join("splits/train.txt"), "s0\ns2\n").unwrap();
        fs::write(dir.join("splits/test.txt"), "s1\n").unwrap();
        let d = load_fashion_synthesis(dir).unwrap();
        assert_eq!((d.train.len(), d.test.len()), (2, 1));
        assert_eq!(d.schema.values[2].len(), 3);
        for s in d.all() {
            assert_eq!((s.image.c, s.image.h, s.image.w), (3, 128, 64));
            assert!(s.image.values.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        let a = collapse_to_synthetic(&d.schema, &d.test[0].labels).unwrap();
        assert_eq!((a.color, a.category, a.sleeve), (Color::Blue, Category::Romper, Sleeve::Short));
    }
}

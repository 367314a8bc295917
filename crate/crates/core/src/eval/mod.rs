//! Evaluation: attribute accuracy of edits, Inception Score and FID over a
//! pluggable feature extractor, and background preservation.

mod metrics;
mod predictor;

use serde::{Deserialize, Serialize};

pub use metrics::{default_splits, fid, gaussian_stats, inception_score, FeatureStats};
pub use predictor::{
    argmax, softmax_rows, train_predictor, AttributePredictor, PredictorConfig, PREDICTOR_FORMAT,
};

use crate::data::{CaptionedSample, Garment, Labels, SLOTS};
use crate::error::{Error, Result};
use crate::film::ImageTensor;
use crate::models::Generator;
use crate::tensor::Matrix;
use crate::text::EmbeddingModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeScore {
    pub overall: f64,
    /// Match rate per slot, in slot order.
    pub per_attribute: [f64; 4],
}

impl AttributeScore {
    pub fn slot(&self, name: &str) -> Option<f64> {
        SLOTS.iter().position(|s| *s == name).map(|i| self.per_attribute[i])
    }
}

/// Fraction of (sample, slot) pairs where the predictor's argmax equals the
/// target label.
pub fn score_labels(predicted: &[Labels], targets: &[Labels]) -> Result<AttributeScore> {
    if predicted.len() != targets.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} targets",
            predicted.len(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::validation("attribute score over an empty list"));
    }
    let n = targets.len() as f64;
    let per_attribute: [f64; 4] = std::array::from_fn(|slot| {
        predicted.iter().zip(targets).filter(|(p, t)| p.0[slot] == t.0[slot]).count() as f64 / n
    });
    Ok(AttributeScore { overall: per_attribute.iter().sum::<f64>() / 4.0, per_attribute })
}

pub fn attribute_score(edited: &[ImageTensor], targets: &[Labels], p: &AttributePredictor) -> Result<AttributeScore> {
    if edited.len() != targets.len() {
        return Err(Error::validation(format!(
            "{} images for {} target attribute sets",
            edited.len(),
            targets.len()
        )));
    }
    score_labels(&p.predict(edited)?, targets)
}

/// Edits of the next-image protocol.
#[derive(Clone, Debug)]
pub struct ProtocolRun {
    pub edited: Vec<ImageTensor>,
    /// Index of the sample whose caption drove each edit.
    pub target_index: Vec<usize>,
    pub score: AttributeScore,
}

/// Edit test image `i` with the caption of image `i+1` (wrapping) and score
/// the edits against the attributes of `i+1`.
pub fn next_image_protocol(
    test: &[CaptionedSample],
    g: &Generator<f32>,
    embed: &EmbeddingModel,
    p: &AttributePredictor,
) -> Result<ProtocolRun> {
    let captions: Vec<&str> = test.iter().map(|s| s.caption.as_str()).collect();
    let h = embed.encode_texts(&captions)?;
    next_image_protocol_embedded(test, g, &h, p)
}

/// As [`next_image_protocol`] with caption embeddings precomputed, one row
/// per test sample.
pub fn next_image_protocol_embedded(
    test: &[CaptionedSample],
    g: &Generator<f32>,
    caption_embeddings: &Matrix<f32>,
    p: &AttributePredictor,
) -> Result<ProtocolRun> {
    let n = test.len();
    if n < 2 {
        return Err(Error::validation("next-image protocol needs at least 2 test samples"));
    }
    if caption_embeddings.rows != n {
        return Err(Error::shape(format!("{} embeddings for {n} samples", caption_embeddings.rows)));
    }
    let target_index: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
    let images: Vec<ImageTensor> = test.iter().map(|s| s.image.clone()).collect();
    let edited = g.generate(&images, &caption_embeddings.select_rows(&target_index))?;
    let targets: Vec<Labels> = target_index.iter().map(|&j| test[j].labels).collect();
    let score = attribute_score(&edited, &targets, p)?;
    Ok(ProtocolRun { edited, target_index, score })
}

/// Mean absolute difference (per channel value) between `source` and
/// `edited` over the pixels an ideal edit leaves alone. The source is
/// re-rendered as itself and as the target (garment and gender) on the same
/// body; pixels where the two differ, or either garment covers, are excluded.
/// Requires synthetic samples.
pub fn background_l1(source: &CaptionedSample, edited: &ImageTensor, target: &Labels) -> Result<f64> {
    let img = &source.image;
    if (edited.c, edited.h, edited.w) != (img.c, img.h, img.w) {
        return Err(Error::shape("edited image does not match the source"));
    }
    let need_body = || Error::validation("background preservation needs a synthetic body");
    let src_attrs = source.attributes()?;
    let tgt_attrs = crate::data::Attributes::from_labels(target)?;
    let (src_img, src_mask) = source
        .render_as(src_attrs.gender, &Garment::of(&src_attrs))
        .ok_or_else(need_body)?;
    let (tgt_img, tgt_mask) = source
        .render_as(tgt_attrs.gender, &Garment::of(&tgt_attrs))
        .ok_or_else(need_body)?;
    let plane = img.h * img.w;
    let (mut sum, mut count) = (0.0, 0usize);
    for px in 0..plane {
        let changed = (0..img.c).any(|c| src_img.values[c * plane + px] != tgt_img.values[c * plane + px]);
        if src_mask[px] || tgt_mask[px] || changed {
            continue;
        }
        for c in 0..img.c {
            sum += (img.values[c * plane + px] - edited.values[c * plane + px]).abs() as f64;
        }
        count += img.c;
    }
    if count == 0 {
        return Err(Error::validation("the edit region covers the whole image"));
    }
    Ok(sum / count as f64)
}

/// Attribute-keyed view of [`AttributeScore::per_attribute`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerAttribute {
    pub gender: f64,
    pub sleeve: f64,
    pub color: f64,
    pub category: f64,
}

impl From<[f64; 4]> for PerAttribute {
    fn from(v: [f64; 4]) -> Self {
        Self { gender: v[0], sleeve: v[1], color: v[2], category: v[3] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub is_mean: f64,
    pub is_std: f64,
    pub fid: f64,
    pub attribute_score: f64,
    pub per_attribute: PerAttribute,
    pub extractor_id: String,
    pub n_samples: usize,
    /// Synthetic data only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_l1: Option<f64>,
}

/// Run the next-image protocol on `test` and report attribute accuracy, IS
/// over joint attribute posteriors of the edits, and FID between edits and
/// the real test images in the predictor's feature space.
pub fn evaluate(
    test: &[CaptionedSample],
    g: &Generator<f32>,
    caption_embeddings: &Matrix<f32>,
    p: &AttributePredictor,
) -> Result<EvaluationReport> {
    let run = next_image_protocol_embedded(test, g, caption_embeddings, p)?;
    let joint = p.joint_proba(&run.edited)?;
    let (is_mean, is_std) = inception_score(&joint, default_splits(joint.len()))?;
    let real: Vec<ImageTensor> = test.iter().map(|s| s.image.clone()).collect();
    let fid_value = fid(
        &gaussian_stats(&p.features(&run.edited)?)?,
        &gaussian_stats(&p.features(&real)?)?,
    )?;
    let background_l1 = if test.iter().all(|s| s.mask.is_some() && s.body_seed.is_some()) {
        let mut total = 0.0;
        for (i, (e, &j)) in run.edited.iter().zip(&run.target_index).enumerate() {
            total += background_l1(&test[i], e, &test[j].labels)?;
        }
        Some(total / test.len() as f64)
    } else {
        None
    };
    Ok(EvaluationReport {
        is_mean,
        is_std,
        fid: fid_value,
        attribute_score: run.score.overall,
        per_attribute: run.score.per_attribute.into(),
        extractor_id: p.extractor_id(),
        n_samples: test.len(),
        background_l1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, AttributeSchema, Gender};
    use crate::models::ModelConfig;

    #[test]
    fn score_arithmetic() {
        let t = vec![Labels([0, 1, 2, 3]), Labels([1, 0, 5, 2])];
        assert_eq!(score_labels(&t, &t).unwrap().overall, 1.0);
        let half = vec![Labels([0, 1, 0, 0]), Labels([1, 0, 0, 0])];
        let s = score_labels(&half, &t).unwrap();
        assert_eq!(s.overall, 0.5);
        assert_eq!(s.per_attribute, [1.0, 1.0, 0.0, 0.0]);
        assert!(matches!(score_labels(&t[..1], &t), Err(Error::Validation(_))));
    }

    #[test]
    fn score_is_permutation_invariant() {
        let p = vec![Labels([0, 1, 2, 3]), Labels([1, 2, 5, 0]), Labels([0, 0, 0, 0])];
        let t = vec![Labels([0, 1, 1, 3]), Labels([1, 0, 5, 2]), Labels([1, 0, 0, 0])];
        let a = score_labels(&p, &t).unwrap();
        let order = [2, 0, 1];
        let pp: Vec<_> = order.iter().map(|&i| p[i]).collect();
        let tt: Vec<_> = order.iter().map(|&i| t[i]).collect();
        assert_eq!(a, score_labels(&pp, &tt).unwrap());
    }

    #[test]
    fn untrained_predictor_is_a_valid_distribution() {
        let d = generate_synthetic(20, 1, (32, 16)).unwrap();
        let p = AttributePredictor::new(AttributeSchema::synthetic(), PredictorConfig::default()).unwrap();
        let imgs: Vec<_> = d.test.iter().map(|s| s.image.clone()).collect();
        for slot in p.predict_proba(&imgs).unwrap() {
            for row in slot {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        let joint = p.joint_proba(&imgs).unwrap();
        assert_eq!(joint[0].len(), 2 * 3 * 8 * 4);
        let (is, _) = inception_score(&joint, 1).unwrap();
        assert!((1.0..=192.0).contains(&is));
        assert_eq!(p.features(&imgs).unwrap()[0].len(), 64);
    }

    #[test]
    fn trained_predictor_is_accurate_and_round_trips() {
        let d = generate_synthetic(600, 5, (32, 16)).unwrap();
        let cfg = PredictorConfig { epochs: 8, ..Default::default() };
        let p = train_predictor(&d.train, &d.schema, &cfg, |_, _| {}).unwrap();
        let imgs: Vec<_> = d.test.iter().map(|s| s.image.clone()).collect();
        let targets: Vec<_> = d.test.iter().map(|s| s.labels).collect();
        let s = attribute_score(&imgs, &targets, &p).unwrap();
        assert!(s.per_attribute.iter().all(|&a| a >= 0.9), "{s:?}");

        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path()).unwrap();
        let q = AttributePredictor::load(dir.path()).unwrap();
        assert_eq!(p.extractor_id(), q.extractor_id());
        assert_eq!(p.features(&imgs).unwrap(), q.features(&imgs).unwrap());
    }

    #[test]
    fn out_of_schema_labels_are_rejected() {
        let mut d = generate_synthetic(20, 1, (32, 16)).unwrap();
        d.train[0].labels = Labels([0, 0, 99, 0]);
        let r = train_predictor(&d.train, &d.schema, &PredictorConfig::default(), |_, _| {});
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn identity_generator_protocol_and_background() {
        let d = generate_synthetic(40, 2, (32, 16)).unwrap();
        let cfg = ModelConfig { base_width: 2, resolution: (32, 16), ..Default::default() };
        let g = Generator::<f32>::new(&cfg, 0).unwrap();
        let p = AttributePredictor::new(d.schema.clone(), PredictorConfig::default()).unwrap();
        let h = Matrix::zeros(d.test.len(), 300);
        let a = evaluate(&d.test, &g, &h, &p).unwrap();
        let b = evaluate(&d.test, &g, &h, &p).unwrap();
        assert_eq!(a, b);
        assert!(a.background_l1.unwrap() >= 0.0);
        let json = serde_json::to_value(&a).unwrap();
        for key in ["is_mean", "is_std", "fid", "attribute_score", "per_attribute", "extractor_id", "n_samples"] {
            assert!(json.get(key).is_some(), "{key}");
        }

        // An unchanged image has zero background error.
        let s = &d.test[0];
        assert_eq!(background_l1(s, &s.image, &d.test[1].labels).unwrap(), 0.0);
    }

    #[test]
    fn rerendered_target_matches_source_outside_both_masks() {
        let d = generate_synthetic(20, 3, (64, 32)).unwrap();
        let src = &d.train[0];
        for tgt in &d.train[1..] {
            let a = tgt.attributes().unwrap();
            let (img, _) = src.render_as(a.gender, &Garment::of(&a)).unwrap();
            assert_eq!(background_l1(src, &img, &tgt.labels).unwrap(), 0.0);
        }
    }

    #[test]
    fn gender_swap_changes_pixels_outside_the_garment() {
        let d = generate_synthetic(20, 3, (64, 32)).unwrap();
        let src = &d.train[0];
        let a = src.attributes().unwrap();
        let other = if a.gender == Gender::Lady { Gender::Man } else { Gender::Lady };
        let (swapped, mask) = src.render_as(other, &Garment::of(&a)).unwrap();
        let plane = swapped.h * swapped.w;
        let outside = (0..plane)
            .filter(|&px| !mask[px] && !src.mask.as_ref().unwrap()[px])
            .filter(|&px| (0..3).any(|c| swapped.values[c * plane + px] != src.image.values[c * plane + px]))
            .count();
        assert!(outside > 0);
        // a shifted background still counts
        let mut shifted = src.image.clone();
        shifted.values.iter_mut().for_each(|v| *v += 0.1);
        let l1 = background_l1(src, &shifted, &src.labels).unwrap();
        assert!((l1 - 0.1).abs() < 1e-5, "{l1}");
    }
}

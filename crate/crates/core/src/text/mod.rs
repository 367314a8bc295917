//! Visual-semantic text embedding: captions go through word vectors and a
//! GRU, images through a convolutional trunk and projector, and the two are
//! aligned with a pairwise ranking loss.

mod encoder;
mod gru;
mod ranking;
mod vocab;

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use encoder::{normalize_backward, Backbone, BackboneConfig, ImageEncoder, DESK_WIDTHS};
pub use gru::{Gru, GruTrace};
pub use ranking::{cosine_matrix, ranking_loss, ranking_loss_grad, retrieve_topk, DEFAULT_MARGIN};
pub use vocab::{words, TokenSequence, Vocabulary, MAX_WORDS, UNK, UNK_ID};

use crate::checkpoint::archive;
use crate::data::CaptionedSample;
use crate::error::{Error, Result};
use crate::film::{FeatureMap, ImageTensor};
use crate::nn::{init_rng, param_name, Adam, Module, Param};
use crate::tensor::Matrix;

/// Dimension of word vectors, GRU state and sentence embeddings.
pub const EMBED_DIM: usize = 300;
const WORD_INIT: f64 = 0.08;
const ENCODE_CHUNK: usize = 64;

/// A sentence (or image) embedding: finite, exactly [`EMBED_DIM`] long.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceEmbedding(Vec<f32>);

impl SentenceEmbedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != EMBED_DIM {
            return Err(Error::shape(format!(
                "embedding has {} entries, expected {EMBED_DIM}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("embedding", "non-finite entry"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub margin: f64,
    pub seed: u64,
    pub backbone: BackboneConfig,
    /// Optional pretrained "word v1 ... v300" text file.
    pub word_vectors: Option<PathBuf>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            epochs: 200,
            margin: DEFAULT_MARGIN,
            seed: 0,
            backbone: BackboneConfig::Desk,
            word_vectors: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    pub vocab: Vocabulary,
    /// `[|V|, EMBED_DIM]`
    pub word_vectors: Param<f32>,
    pub gru: Gru<f32>,
    pub image: ImageEncoder,
    pub backbone: BackboneConfig,
}

/// Everything the text side's backward pass needs.
struct TextTrace {
    seqs: Vec<Vec<usize>>,
    gru: GruTrace<f32>,
}

impl EmbeddingModel {
    pub fn new(vocab: Vocabulary, config: &EmbeddingConfig) -> Result<Self> {
        let mut rng = init_rng(config.seed);
        let mut word_vectors = Param::uniform(&[vocab.len(), EMBED_DIM], WORD_INIT, &mut rng);
        if let Some(path) = &config.word_vectors {
            load_word_vectors(path, &vocab, &mut word_vectors.value)?;
        }
        let gru = Gru::new(EMBED_DIM, EMBED_DIM, &mut rng);
        let image = ImageEncoder::new(&config.backbone, EMBED_DIM, &mut rng)?;
        Ok(Self {
            vocab,
            word_vectors,
            gru,
            image,
            backbone: config.backbone.clone(),
        })
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        self.vocab.tokenize(text)
    }

    fn text_forward(&self, seqs: &[&TokenSequence]) -> (Matrix<f32>, TextTrace) {
        let n = seqs.len();
        let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let inputs: Vec<Matrix<f32>> = (0..steps)
            .map(|t| {
                let mut x = Matrix::zeros(n, EMBED_DIM);
                for (r, s) in seqs.iter().enumerate() {
                    if let Some(&id) = s.ids().get(t) {
                        x.row_mut(r).copy_from_slice(self.word_row(id));
                    }
                }
                x
            })
            .collect();
        let lengths: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        let (h, gru) = self.gru.forward(&inputs, &lengths);
        let seqs = seqs.iter().map(|s| s.ids().to_vec()).collect();
        (h, TextTrace { seqs, gru })
    }

    fn text_backward(&mut self, trace: &TextTrace, dh: &Matrix<f32>) {
        let dxs = self.gru.backward(&trace.gru, dh);
        for (t, dx) in dxs.iter().enumerate() {
            for (r, s) in trace.seqs.iter().enumerate() {
                if let Some(&id) = s.get(t) {
                    let g = &mut self.word_vectors.grad[id * EMBED_DIM..(id + 1) * EMBED_DIM];
                    g.iter_mut().zip(dx.row(r)).for_each(|(a, b)| *a += b);
                }
            }
        }
    }

    fn word_row(&self, id: usize) -> &[f32] {
        &self.word_vectors.value[id * EMBED_DIM..(id + 1) * EMBED_DIM]
    }

    /// Final GRU state over the sequence's word vectors.
    pub fn encode_sentence(&self, tokens: &TokenSequence) -> Result<SentenceEmbedding> {
        if let Some(bad) = tokens.ids().iter().find(|&&i| i >= self.vocab.len()) {
            return Err(Error::validation(format!("token id {bad} outside vocabulary")));
        }
        SentenceEmbedding::new(self.text_forward(&[tokens]).0.data)
    }

    /// Embed many captions; row `i` belongs to `texts[i]`.
    pub fn encode_texts(&self, texts: &[&str]) -> Result<Matrix<f32>> {
        let seqs = texts.iter().map(|t| self.tokenize(t)).collect::<Result<Vec<_>>>()?;
        let mut out = Matrix::zeros(seqs.len(), EMBED_DIM);
        for (c, chunk) in seqs.chunks(ENCODE_CHUNK).enumerate() {
            let refs: Vec<&TokenSequence> = chunk.iter().collect();
            let (h, _) = self.text_forward(&refs);
            let start = c * ENCODE_CHUNK * EMBED_DIM;
            out.data[start..start + h.data.len()].copy_from_slice(&h.data);
        }
        Ok(out)
    }

    /// Unit-norm image embedding.
    pub fn encode_image_features(&self, x: &ImageTensor) -> Result<SentenceEmbedding> {
        SentenceEmbedding::new(self.encode_images(std::slice::from_ref(x))?.data)
    }

    pub fn encode_images(&self, images: &[ImageTensor]) -> Result<Matrix<f32>> {
        let mut out = Matrix::zeros(images.len(), EMBED_DIM);
        for (c, chunk) in images.chunks(ENCODE_CHUNK).enumerate() {
            let (y, _) = self.image.forward(&FeatureMap::stack(chunk)?)?;
            let start = c * ENCODE_CHUNK * EMBED_DIM;
            out.data[start..start + y.data.len()].copy_from_slice(&y.data);
        }
        Ok(out)
    }

    /// Mean ranking loss over consecutive batches of `samples`.
    pub fn evaluate_loss(&self, samples: &[CaptionedSample], batch: usize, margin: f64) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0;
        for chunk in samples.chunks(batch.max(2)) {
            if chunk.len() < 2 {
                continue;
            }
            let images: Vec<ImageTensor> = chunk.iter().map(|s| s.image.clone()).collect();
            let captions: Vec<&str> = chunk.iter().map(|s| s.caption.as_str()).collect();
            let v = self.encode_images(&images)?;
            let t = self.encode_texts(&captions)?;
            total += ranking_loss(&v, &t, margin as f32)? as f64;
            count += 1;
        }
        if count == 0 {
            return Err(Error::validation("need at least 2 samples to evaluate ranking loss"));
        }
        Ok(total / count as f64)
    }

    /// One optimization step on aligned pairs; returns the batch loss.
    fn train_step(
        &mut self,
        images: &[ImageTensor],
        seqs: &[&TokenSequence],
        margin: f32,
        opt: &mut Adam<f32>,
    ) -> Result<f32> {
        let (v, itrace) = self.image.forward(&FeatureMap::stack(images)?)?;
        let (t, ttrace) = self.text_forward(seqs);
        let (loss, dv, dt) = ranking_loss_grad(&v, &t, margin)?;
        if !loss.is_finite() {
            return Err(Error::numeric("embedding training", "non-finite ranking loss"));
        }
        self.image.backward(&itrace, &dv);
        self.text_backward(&ttrace, &dt);
        opt.step(self);
        Ok(loss)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        archive::save(self, &dir.join("embedding.bin"))?;
        self.vocab.save(&dir.join("vocab.json"))?;
        let path = dir.join("embedding.json");
        let json = serde_json::to_string_pretty(&self.backbone).map_err(|e| Error::format("embedding.json", e))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vocab = Vocabulary::load(&dir.join("vocab.json"))?;
        let path = dir.join("embedding.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let backbone: BackboneConfig =
            serde_json::from_str(&text).map_err(|e| Error::format("embedding.json", e))?;
        // Frozen trunk weights live in the archive too, so no external file is needed.
        let config = EmbeddingConfig {
            backbone: BackboneConfig::Desk,
            ..EmbeddingConfig::default()
        };
        let mut model = Self::new(vocab, &config)?;
        if let BackboneConfig::Vgg16 { .. } = backbone {
            model.image = vgg_shell(&mut init_rng(0));
        }
        model.backbone = backbone;
        archive::load_into(&mut model, &dir.join("embedding.bin"))?;
        Ok(model)
    }
}

fn vgg_shell(rng: &mut ChaCha8Rng) -> ImageEncoder {
    use crate::nn::{Conv2d, Linear, ParamKind};
    let convs = [(3, 64), (64, 64), (64, 128), (128, 128)]
        .iter()
        .map(|&(i, o)| {
            let mut c = Conv2d::new(i, o, 3, (1, 1), rng);
            c.weight.kind = ParamKind::Buffer;
            c.bias.kind = ParamKind::Buffer;
            c
        })
        .collect();
    ImageEncoder {
        backbone: Backbone::Vgg16(convs),
        projector: Linear::new(128, EMBED_DIM, rng),
    }
}

impl Module<f32> for EmbeddingModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<f32>)) {
        f(&param_name(prefix, "word_vectors"), &self.word_vectors);
        self.gru.visit(&param_name(prefix, "gru"), f);
        self.image.visit(&param_name(prefix, "image"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f32>)) {
        f(&param_name(prefix, "word_vectors"), &mut self.word_vectors);
        self.gru.visit_mut(&param_name(prefix, "gru"), f);
        self.image.visit_mut(&param_name(prefix, "image"), f);
    }
}

/// Overwrite rows of `table` for every vocabulary word found in a
/// "word v1 ... vD" text file. A leading "count dim" header line is skipped.
pub fn load_word_vectors(path: &Path, vocab: &Vocabulary, table: &mut [f32]) -> Result<usize> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut found = 0;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        if lineno == 0 && rest.len() == 1 {
            continue;
        }
        if rest.len() != EMBED_DIM {
            return Err(Error::format(
                "word vector file",
                format!("line {} has {} values, expected {EMBED_DIM}", lineno + 1, rest.len()),
            ));
        }
        let Some(id) = vocab.id(word) else { continue };
        let row = &mut table[id * EMBED_DIM..(id + 1) * EMBED_DIM];
        for (dst, s) in row.iter_mut().zip(rest) {
            *dst = s
                .parse()
                .map_err(|e| Error::format("word vector file", format!("line {}: {e}", lineno + 1)))?;
        }
        found += 1;
    }
    Ok(found)
}

/// Train the joint embedding on image/caption pairs. `on_epoch` receives the
/// epoch index and its mean batch loss.
pub fn train_embedding(
    samples: &[CaptionedSample],
    config: &EmbeddingConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<EmbeddingModel> {
    if samples.is_empty() {
        return Err(Error::validation("embedding training needs at least one sample"));
    }
    if config.batch_size < 2 {
        return Err(Error::config("embedding batch size must be at least 2"));
    }
    let vocab = Vocabulary::build(samples.iter().map(|s| s.caption.as_str()));
    let mut model = EmbeddingModel::new(vocab, config)?;
    let seqs = samples
        .iter()
        .map(|s| model.tokenize(&s.caption))
        .collect::<Result<Vec<_>>>()?;
    let mut opt = Adam::new(config.lr, config.beta1, config.beta2, config.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_e4b);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0);
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let images: Vec<ImageTensor> = chunk.iter().map(|&i| samples[i].image.clone()).collect();
            let toks: Vec<&TokenSequence> = chunk.iter().map(|&i| &seqs[i]).collect();
            total += model.train_step(&images, &toks, config.margin as f32, &mut opt)? as f64;
            batches += 1;
        }
        on_epoch(epoch, if batches > 0 { total / batches as f64 } else { 0.0 });
    }
    Ok(model)
}

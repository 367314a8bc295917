use rand_chacha::ChaCha8Rng;

use super::block::{BlockTrace, ResidualBlock};
use super::unit::{check_finite, check_unit, Act, ConvUnit, UnitTrace};
use super::{Conditioning, FilmInit, ModelConfig};
use crate::error::{Error, Result};
use crate::film::{FeatureMap, FilmGenerator, ImageTensor};
use crate::nn::{init_rng, param_name, upsample2, upsample2_backward, Linear, Mode, Module, Param};
use crate::tensor::{Batch, Matrix, Scalar};

pub const RESIDUAL_BLOCKS: usize = 4;

/// Encoder, four residual blocks conditioned on the text, and a decoder fed
/// by encoder skip connections.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub config: ModelConfig,
    pub encoder: [ConvUnit<T>; 4],
    /// Concat conditioning only: text projection and the fusion conv.
    pub text_proj: Option<Linear<T>>,
    pub fuse: Option<ConvUnit<T>>,
    pub blocks: Vec<ResidualBlock<T>>,
    pub decoder: [ConvUnit<T>; 3],
    pub output: ConvUnit<T>,
    /// When false the blocks skip FiLM modulation (the ablated twin).
    pub film_enabled: bool,
}

pub struct GenTrace<T> {
    enc: Vec<UnitTrace<T>>,
    proj: Option<(Matrix<T>, UnitTrace<T>)>,
    blocks: Vec<BlockTrace<T>>,
    dec: Vec<UnitTrace<T>>,
    out: UnitTrace<T>,
    h: Matrix<T>,
}

impl<T> GenTrace<T> {
    /// Output of each residual block, `[8b, N, H/4, W/4]`.
    pub fn block_outputs(&self) -> impl Iterator<Item = &Batch<T>> {
        self.blocks.iter().map(|b| &b.out)
    }
}

pub(super) fn film_for<T: Scalar>(cfg: &ModelConfig, channels: usize, rng: &mut ChaCha8Rng) -> FilmGenerator<T> {
    match cfg.film_init {
        FilmInit::Identity => FilmGenerator::identity(cfg.embed_dim, channels),
        FilmInit::Random { scale } => FilmGenerator::random(cfg.embed_dim, channels, scale, rng),
    }
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let b = config.base_width;
        let mut rng = init_rng(seed);
        let rng = &mut rng;
        let encoder = [
            ConvUnit::new(3, b, 3, (1, 1), false, Act::Relu, rng),
            ConvUnit::new(b, 2 * b, 3, (2, 2), true, Act::Relu, rng),
            ConvUnit::new(2 * b, 4 * b, 3, (2, 2), true, Act::Relu, rng),
            ConvUnit::new(4 * b, 8 * b, 3, (1, 1), true, Act::Relu, rng),
        ];
        let (text_proj, fuse) = match config.conditioning {
            Conditioning::Film => (None, None),
            Conditioning::Concat => {
                let p = config.text_channels();
                (
                    Some(Linear::new(config.embed_dim, p, rng)),
                    Some(ConvUnit::new(8 * b + p, 8 * b, 3, (1, 1), true, Act::Relu, rng)),
                )
            }
        };
        let blocks = (0..RESIDUAL_BLOCKS)
            .map(|_| {
                let film = match config.conditioning {
                    Conditioning::Film => Some(film_for(config, 8 * b, rng)),
                    Conditioning::Concat => None,
                };
                ResidualBlock::new(8 * b, Act::Relu, film, rng)
            })
            .collect();
        let decoder = [
            ConvUnit::new(8 * b + 4 * b, 4 * b, 3, (1, 1), true, Act::Relu, rng),
            ConvUnit::new(4 * b + 2 * b, 2 * b, 3, (1, 1), true, Act::Relu, rng),
            ConvUnit::new(2 * b + b, b, 3, (1, 1), true, Act::Relu, rng),
        ];
        let output = ConvUnit::new(b, 3, 3, (1, 1), false, Act::Tanh, rng);
        Ok(Self {
            config: config.clone(),
            encoder,
            text_proj,
            fuse,
            blocks,
            decoder,
            output,
            film_enabled: true,
        })
    }

    /// Same weights with FiLM modulation removed from every block.
    pub fn ablated(&self) -> Self {
        Self {
            film_enabled: false,
            ..self.clone()
        }
    }

    fn check_inputs(&self, x: &Batch<T>, h: &Matrix<T>) -> Result<()> {
        let (rh, rw) = self.config.resolution;
        if x.c != 3 || x.h != rh || x.w != rw {
            return Err(Error::shape(format!(
                "generator expects 3x{rh}x{rw} images, got {}x{}x{}",
                x.c, x.h, x.w
            )));
        }
        if h.rows != x.n || h.cols != self.config.embed_dim {
            return Err(Error::shape(format!(
                "generator expects {} embeddings of length {}, got {}x{}",
                x.n, self.config.embed_dim, h.rows, h.cols
            )));
        }
        Ok(())
    }

    /// `x` is `[3, N, H, W]`, `h` is `[N, d]`. Output has the shape of `x`.
    pub fn forward(&self, x: &Batch<T>, h: &Matrix<T>, mode: Mode) -> Result<(Batch<T>, GenTrace<T>)> {
        self.check_inputs(x, h)?;
        let mut enc = Vec::with_capacity(4);
        let mut cur = x.clone();
        for (i, unit) in self.encoder.iter().enumerate() {
            let t = unit.forward(cur, mode)?;
            check_unit(&t, &format!("encoder stage E{}", i + 1))?;
            cur = t.y.clone();
            enc.push(t);
        }

        let proj = match (&self.text_proj, &self.fuse) {
            (Some(lin), Some(fuse)) => {
                let p = lin.forward(h)?;
                let tiled = tile(&p, cur.h, cur.w);
                let t = fuse.forward(Batch::concat_channels(&cur, &tiled)?, mode)?;
                check_unit(&t, "text fusion")?;
                cur = t.y.clone();
                Some((p, t))
            }
            _ => None,
        };

        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let t = block.forward(cur, h, self.film_enabled, mode)?;
            check_finite(&t.out, &format!("residual block {}", i + 1))?;
            cur = t.out.clone();
            blocks.push(t);
        }

        // Each skip joins at matching resolution, then the result is upsampled.
        let mut dec = Vec::with_capacity(3);
        for (i, unit) in self.decoder.iter().enumerate() {
            let skip = &enc[2 - i].y;
            let t = unit.forward(Batch::concat_channels(&cur, skip)?, mode)?;
            check_unit(&t, &format!("decoder stage D{}", i + 1))?;
            cur = if i < 2 { upsample2(&t.y) } else { t.y.clone() };
            dec.push(t);
        }
        let out = self.output.forward(cur, mode)?;
        check_unit(&out, "output layer")?;
        let y = out.y.clone();
        Ok((
            y,
            GenTrace {
                enc,
                proj,
                blocks,
                dec,
                out,
                h: h.clone(),
            },
        ))
    }

    /// Accumulate parameter gradients; returns `(dx, dh)`.
    pub fn backward(&mut self, trace: &GenTrace<T>, dout: &Batch<T>) -> (Batch<T>, Matrix<T>) {
        let h = &trace.h;
        let mut dh = Matrix::zeros(h.rows, h.cols);
        let mut d = self.output.backward(&trace.out, dout.clone());
        let mut dskips: Vec<Batch<T>> = Vec::with_capacity(3);
        for i in (0..3).rev() {
            if i < 2 {
                d = upsample2_backward(&d);
            }
            let dcat = self.decoder[i].backward(&trace.dec[i], d);
            let main = dcat.c - trace.enc[2 - i].y.c;
            let (dmain, dskip) = dcat.split_channels(main);
            dskips.push(dskip);
            d = dmain;
        }
        // dskips now holds gradients for E1, E2, E3 in that order.
        for (i, block) in self.blocks.iter_mut().enumerate().rev() {
            let (dz, dhi) = block.backward(&trace.blocks[i], h, &d);
            add(&mut dh, &dhi);
            d = dz;
        }
        if let (Some(lin), Some(fuse), Some((_, ft))) = (&mut self.text_proj, &mut self.fuse, &trace.proj) {
            let dcat = fuse.backward(ft, d);
            let (dmain, dtiled) = dcat.split_channels(8 * self.config.base_width);
            let dp = untile(&dtiled);
            add(&mut dh, &lin.backward(h, &dp));
            d = dmain;
        }
        for i in (0..4).rev() {
            if i < 3 {
                d.add_assign(&dskips[i]);
            }
            d = self.encoder[i].backward(&trace.enc[i], d);
        }
        (d, dh)
    }

    /// Fold batch statistics from a training-mode pass into running stats.
    pub fn commit(&mut self, trace: &GenTrace<T>) {
        for (u, t) in self.encoder.iter_mut().zip(&trace.enc) {
            u.commit(t);
        }
        if let (Some(fuse), Some((_, t))) = (&mut self.fuse, &trace.proj) {
            fuse.commit(t);
        }
        for (b, t) in self.blocks.iter_mut().zip(&trace.blocks) {
            b.commit(t);
        }
        for (u, t) in self.decoder.iter_mut().zip(&trace.dec) {
            u.commit(t);
        }
        self.output.commit(&trace.out);
    }

    /// Channel mean of every residual block's output, min-max normalized to
    /// [0, 1]; one list of four maps per sample. Runs in inference mode.
    pub fn attention_maps(&self, x: &Batch<T>, h: &Matrix<T>) -> Result<Vec<Vec<FeatureMap<T>>>> {
        let (_, trace) = self.forward(x, h, Mode::Eval)?;
        let mut out = vec![Vec::with_capacity(self.blocks.len()); x.n];
        for b in trace.block_outputs() {
            for (s, maps) in out.iter_mut().enumerate() {
                let mut mean = vec![T::zero(); b.plane()];
                for c in 0..b.c {
                    mean.iter_mut().zip(b.map(c, s)).for_each(|(m, &v)| *m += v);
                }
                let inv = T::one() / T::lit(b.c as f64);
                mean.iter_mut().for_each(|m| *m *= inv);
                maps.push(FeatureMap::new(1, b.h, b.w, min_max_normalize(&mean))?);
            }
        }
        Ok(out)
    }
}

impl Generator<f32> {
    /// Inference over images in chunks; `h` rows align with `images`.
    pub fn generate(&self, images: &[ImageTensor], h: &Matrix<f32>) -> Result<Vec<ImageTensor>> {
        if h.rows != images.len() {
            return Err(Error::shape(format!(
                "{} images but {} embeddings",
                images.len(),
                h.rows
            )));
        }
        let mut out = Vec::with_capacity(images.len());
        for start in (0..images.len()).step_by(32) {
            let end = (start + 32).min(images.len());
            let idx: Vec<usize> = (start..end).collect();
            let (y, _) = self.forward(&FeatureMap::stack(&images[start..end])?, &h.select_rows(&idx), Mode::Eval)?;
            out.extend((0..y.n).map(|s| FeatureMap::from_batch(&y, s)));
        }
        Ok(out)
    }
}

/// Min-max scale to [0, 1]; a constant input maps to all zeros.
pub fn min_max_normalize<T: Scalar>(v: &[T]) -> Vec<T> {
    let lo = v.iter().copied().fold(T::infinity(), T::min);
    let hi = v.iter().copied().fold(T::neg_infinity(), T::max);
    let range = hi - lo;
    if !(range > T::zero()) {
        return vec![T::zero(); v.len()];
    }
    v.iter().map(|&x| (x - lo) / range).collect()
}

/// Replicate `[N, P]` rows over an `h×w` grid as a `[P, N, h, w]` batch.
pub(super) fn tile<T: Scalar>(p: &Matrix<T>, h: usize, w: usize) -> Batch<T> {
    let mut out = Batch::zeros(p.cols, p.rows, h, w);
    for c in 0..p.cols {
        for s in 0..p.rows {
            let v = p.row(s)[c];
            out.map_mut(c, s).iter_mut().for_each(|x| *x = v);
        }
    }
    out
}

pub(super) fn untile<T: Scalar>(d: &Batch<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(d.n, d.c);
    for c in 0..d.c {
        for s in 0..d.n {
            out.row_mut(s)[c] = d.map(c, s).iter().fold(T::zero(), |a, &v| a + v);
        }
    }
    out
}

fn add<T: Scalar>(a: &mut Matrix<T>, b: &Matrix<T>) {
    a.data.iter_mut().zip(&b.data).for_each(|(x, &y)| *x += y);
}

impl<T: Scalar> Module<T> for Generator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, u) in self.encoder.iter().enumerate() {
            u.visit(&param_name(prefix, &format!("enc{}", i + 1)), f);
        }
        if let Some(l) = &self.text_proj {
            l.visit(&param_name(prefix, "text_proj"), f);
        }
        if let Some(u) = &self.fuse {
            u.visit(&param_name(prefix, "fuse"), f);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&param_name(prefix, &format!("res{}", i + 1)), f);
        }
        for (i, u) in self.decoder.iter().enumerate() {
            u.visit(&param_name(prefix, &format!("dec{}", i + 1)), f);
        }
        self.output.visit(&param_name(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, u) in self.encoder.iter_mut().enumerate() {
            u.visit_mut(&param_name(prefix, &format!("enc{}", i + 1)), f);
        }
        if let Some(l) = &mut self.text_proj {
            l.visit_mut(&param_name(prefix, "text_proj"), f);
        }
        if let Some(u) = &mut self.fuse {
            u.visit_mut(&param_name(prefix, "fuse"), f);
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&param_name(prefix, &format!("res{}", i + 1)), f);
        }
        for (i, u) in self.decoder.iter_mut().enumerate() {
            u.visit_mut(&param_name(prefix, &format!("dec{}", i + 1)), f);
        }
        self.output.visit_mut(&param_name(prefix, "out"), f);
    }
}

use super::block::{BlockTrace, ResidualBlock};
use super::generator::{film_for, tile, untile};
use super::unit::{check_finite, check_unit, Act, ConvUnit, UnitTrace};
use super::{Conditioning, ModelConfig};
use crate::error::{Error, Result};
use crate::film::{modulate_batch, modulate_batch_backward, FilmGenerator};
use crate::nn::{init_rng, param_name, sigmoid, Conv2d, Linear, Mode, Module, Param};
use crate::tensor::{Batch, Matrix, Scalar};

/// Strided encoder (last stage strides 2×1), text fusion, one residual
/// block, and a 1×1 classifier averaged over positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub config: ModelConfig,
    pub encoder: [ConvUnit<T>; 4],
    pub film: Option<FilmGenerator<T>>,
    pub text_proj: Option<Linear<T>>,
    pub fuse: Option<ConvUnit<T>>,
    pub residual: ResidualBlock<T>,
    pub head: Conv2d<T>,
}

enum Fusion<T> {
    Film { z: Batch<T>, gamma: Matrix<T> },
    Concat { trace: UnitTrace<T> },
}

pub struct DiscTrace<T> {
    enc: Vec<UnitTrace<T>>,
    fusion: Fusion<T>,
    res: BlockTrace<T>,
    /// Residual output after the leaky activation (head input).
    feat: Batch<T>,
    h: Matrix<T>,
    pub logits: Vec<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let b = config.base_width;
        let mut rng = init_rng(seed);
        let rng = &mut rng;
        let encoder = [
            ConvUnit::new(3, b, 3, (2, 2), false, Act::Leaky, rng),
            ConvUnit::new(b, 2 * b, 3, (2, 2), true, Act::Leaky, rng),
            ConvUnit::new(2 * b, 4 * b, 3, (2, 2), true, Act::Leaky, rng),
            ConvUnit::new(4 * b, 8 * b, 3, (2, 1), true, Act::Leaky, rng),
        ];
        let (film, text_proj, fuse) = match config.conditioning {
            Conditioning::Film => (Some(film_for(config, 8 * b, rng)), None, None),
            Conditioning::Concat => {
                let p = config.text_channels();
                (
                    None,
                    Some(Linear::new(config.embed_dim, p, rng)),
                    Some(ConvUnit::new(8 * b + p, 8 * b, 1, (1, 1), true, Act::Leaky, rng)),
                )
            }
        };
        let residual = ResidualBlock::new(8 * b, Act::Leaky, None, rng);
        let head = Conv2d::new(8 * b, 1, 1, (1, 1), rng);
        Ok(Self {
            config: config.clone(),
            encoder,
            film,
            text_proj,
            fuse,
            residual,
            head,
        })
    }

    /// Scores in (0, 1), one per sample, plus the trace for backward.
    pub fn forward(&self, x: &Batch<T>, h: &Matrix<T>, mode: Mode) -> Result<(Vec<T>, DiscTrace<T>)> {
        let (rh, rw) = self.config.resolution;
        if x.c != 3 || x.h != rh || x.w != rw {
            return Err(Error::shape(format!(
                "discriminator expects 3x{rh}x{rw} images, got {}x{}x{}",
                x.c, x.h, x.w
            )));
        }
        if h.rows != x.n || h.cols != self.config.embed_dim {
            return Err(Error::shape(format!(
                "discriminator expects {} embeddings of length {}, got {}x{}",
                x.n, self.config.embed_dim, h.rows, h.cols
            )));
        }
        let mut enc = Vec::with_capacity(4);
        let mut cur = x.clone();
        for (i, unit) in self.encoder.iter().enumerate() {
            let t = unit.forward(cur, mode)?;
            check_unit(&t, &format!("discriminator stage {}", i + 1))?;
            cur = t.y.clone();
            enc.push(t);
        }
        let (fused, fusion) = match (&self.film, &self.text_proj, &self.fuse) {
            (Some(g), _, _) => {
                let (gamma, beta) = g.forward(h)?;
                (modulate_batch(&cur, &gamma, &beta), Fusion::Film { z: cur, gamma })
            }
            (None, Some(lin), Some(fuse)) => {
                let p = lin.forward(h)?;
                let tiled = tile(&p, cur.h, cur.w);
                let trace = fuse.forward(Batch::concat_channels(&cur, &tiled)?, mode)?;
                (trace.y.clone(), Fusion::Concat { trace })
            }
            _ => return Err(Error::config("discriminator has no text fusion")),
        };
        let res = self.residual.forward(fused, h, false, mode)?;
        let mut feat = res.out.clone();
        Act::Leaky.apply(&mut feat.data);
        let map = self.head.forward(&feat)?;
        check_finite(&map, "discriminator head")?;
        let inv = T::one() / T::lit(map.plane() as f64);
        let logits: Vec<T> = (0..map.n)
            .map(|s| map.map(0, s).iter().fold(T::zero(), |a, &v| a + v) * inv)
            .collect();
        let scores = logits.iter().map(|&l| sigmoid(l)).collect();
        Ok((
            scores,
            DiscTrace {
                enc,
                fusion,
                res,
                feat,
                h: h.clone(),
                logits,
            },
        ))
    }

    /// Backpropagate per-sample gradients w.r.t. the logits (pre-sigmoid);
    /// returns the gradient w.r.t. the input images.
    pub fn backward(&mut self, trace: &DiscTrace<T>, dlogits: &[T]) -> Batch<T> {
        let f = &trace.feat;
        let inv = T::one() / T::lit(f.plane() as f64);
        let mut dmap = Batch::zeros(1, f.n, f.h, f.w);
        for (s, &d) in dlogits.iter().enumerate() {
            dmap.map_mut(0, s).iter_mut().for_each(|v| *v = d * inv);
        }
        let mut d = self.head.backward(f, &dmap);
        Act::Leaky.backward(&trace.feat.data, &mut d.data);
        let (mut d, _) = self.residual.backward(&trace.res, &trace.h, &d);
        match (&trace.fusion, &mut self.film, &mut self.text_proj, &mut self.fuse) {
            (Fusion::Film { z, gamma }, Some(g), _, _) => {
                let (dz, dgamma, dbeta) = modulate_batch_backward(z, gamma, &d);
                g.backward(&trace.h, &dgamma, &dbeta);
                d = dz;
            }
            (Fusion::Concat { trace: ft }, _, Some(lin), Some(fuse)) => {
                let dcat = fuse.backward(ft, d);
                let (dmain, dtiled) = dcat.split_channels(8 * self.config.base_width);
                lin.backward(&trace.h, &untile(&dtiled));
                d = dmain;
            }
            _ => unreachable!("fusion trace matches the network"),
        }
        for i in (0..4).rev() {
            d = self.encoder[i].backward(&trace.enc[i], d);
        }
        d
    }

    pub fn commit(&mut self, trace: &DiscTrace<T>) {
        for (u, t) in self.encoder.iter_mut().zip(&trace.enc) {
            u.commit(t);
        }
        if let (Some(fuse), Fusion::Concat { trace: t }) = (&mut self.fuse, &trace.fusion) {
            fuse.commit(t);
        }
        self.residual.commit(&trace.res);
    }
}

impl<T: Scalar> Module<T> for Discriminator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, u) in self.encoder.iter().enumerate() {
            u.visit(&param_name(prefix, &format!("enc{}", i + 1)), f);
        }
        if let Some(g) = &self.film {
            g.visit(&param_name(prefix, "film"), f);
        }
        if let Some(l) = &self.text_proj {
            l.visit(&param_name(prefix, "text_proj"), f);
        }
        if let Some(u) = &self.fuse {
            u.visit(&param_name(prefix, "fuse"), f);
        }
        self.residual.visit(&param_name(prefix, "res"), f);
        self.head.visit(&param_name(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, u) in self.encoder.iter_mut().enumerate() {
            u.visit_mut(&param_name(prefix, &format!("enc{}", i + 1)), f);
        }
        if let Some(g) = &mut self.film {
            g.visit_mut(&param_name(prefix, "film"), f);
        }
        if let Some(l) = &mut self.text_proj {
            l.visit_mut(&param_name(prefix, "text_proj"), f);
        }
        if let Some(u) = &mut self.fuse {
            u.visit_mut(&param_name(prefix, "fuse"), f);
        }
        self.residual.visit_mut(&param_name(prefix, "res"), f);
        self.head.visit_mut(&param_name(prefix, "head"), f);
    }
}

//! Feature-wise linear modulation and the total-variation penalty.
//!
//! A FiLM generator maps a sentence embedding `h` to per-channel scale and
//! shift vectors, `gamma = W_gamma·h + b_gamma` and `beta = W_beta·h + b_beta`,
//! which then act on every spatial position of a feature map:
//! `out[k,i,j] = z[k,i,j]·gamma[k] + beta[k]`.
//!
//! Generators start at the identity (`W = 0`, `b_gamma = 1`, `b_beta = 0`), so
//! an untrained conditioning path leaves features untouched.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Module, Param};
use crate::tensor::{gemm, Batch, Matrix, Op, Scalar};

/// A single `C×H×W` feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub values: Vec<T>,
}

/// An image in `C×H×W` layout with values in `[-1, 1]`.
pub type ImageTensor = FeatureMap<f32>;

impl<T: Scalar> FeatureMap<T> {
    pub fn new(c: usize, h: usize, w: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != c * h * w {
            return Err(Error::shape(format!(
                "{c}x{h}x{w} map needs {} values, got {}",
                c * h * w,
                values.len()
            )));
        }
        Ok(Self { c, h, w, values })
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            values: vec![T::zero(); c * h * w],
        }
    }

    pub fn at(&self, k: usize, i: usize, j: usize) -> T {
        self.values[(k * self.h + i) * self.w + j]
    }

    pub fn plane(&self, k: usize) -> &[T] {
        let p = self.h * self.w;
        &self.values[k * p..(k + 1) * p]
    }

    /// View as a one-sample batch.
    pub fn to_batch(&self) -> Batch<T> {
        Batch {
            c: self.c,
            n: 1,
            h: self.h,
            w: self.w,
            data: self.values.clone(),
        }
    }

    pub fn from_batch(b: &Batch<T>, sample: usize) -> Self {
        Self {
            c: b.c,
            h: b.h,
            w: b.w,
            values: b.sample(sample),
        }
    }

    pub fn stack(maps: &[Self]) -> Result<Batch<T>> {
        let first = maps
            .first()
            .ok_or_else(|| Error::validation("cannot stack zero maps"))?;
        let (c, h, w) = (first.c, first.h, first.w);
        let mut out = Batch::zeros(c, maps.len(), h, w);
        for (s, m) in maps.iter().enumerate() {
            if (m.c, m.h, m.w) != (c, h, w) {
                return Err(Error::shape(format!(
                    "map {s} is {}x{}x{}, expected {c}x{h}x{w}",
                    m.c, m.h, m.w
                )));
            }
            for k in 0..c {
                out.map_mut(k, s).copy_from_slice(m.plane(k));
            }
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Per-channel modulation vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FilmParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> FilmParams<T> {
    pub fn identity(c: usize) -> Self {
        Self {
            gamma: vec![T::one(); c],
            beta: vec![T::zero(); c],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Affine map from a sentence embedding to one layer's [`FilmParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct FilmGenerator<T> {
    pub w_gamma: Param<T>,
    pub b_gamma: Param<T>,
    pub w_beta: Param<T>,
    pub b_beta: Param<T>,
    pub channels: usize,
    pub embed_dim: usize,
}

impl<T: Scalar> FilmGenerator<T> {
    /// Identity-start generator for `channels` feature channels.
    pub fn identity(embed_dim: usize, channels: usize) -> Self {
        Self {
            w_gamma: Param::zeros(&[channels, embed_dim]),
            b_gamma: Param::filled(&[channels], T::one()),
            w_beta: Param::zeros(&[channels, embed_dim]),
            b_beta: Param::zeros(&[channels]),
            channels,
            embed_dim,
        }
    }

    /// Identity biases with small random projection weights.
    pub fn random(embed_dim: usize, channels: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w_gamma: Param::uniform(&[channels, embed_dim], scale, rng),
            w_beta: Param::uniform(&[channels, embed_dim], scale, rng),
            ..Self::identity(embed_dim, channels)
        }
    }

    pub fn from_parts(
        w_gamma: Matrix<T>,
        b_gamma: Vec<T>,
        w_beta: Matrix<T>,
        b_beta: Vec<T>,
    ) -> Result<Self> {
        let (c, d) = (w_gamma.rows, w_gamma.cols);
        if (w_beta.rows, w_beta.cols) != (c, d) || b_gamma.len() != c || b_beta.len() != c {
            return Err(Error::shape(format!(
                "inconsistent FiLM generator shapes: W_gamma {}x{}, W_beta {}x{}, b_gamma {}, b_beta {}",
                c,
                d,
                w_beta.rows,
                w_beta.cols,
                b_gamma.len(),
                b_beta.len()
            )));
        }
        let mut g = Self::identity(d, c);
        g.w_gamma.value = w_gamma.data;
        g.b_gamma.value = b_gamma;
        g.w_beta.value = w_beta.data;
        g.b_beta.value = b_beta;
        Ok(g)
    }

    /// Batched parameters for embeddings stored as rows of `h` (`[N, d]`).
    /// Returns `(gamma, beta)`, each `[N, C]`.
    pub fn forward(&self, h: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        if h.cols != self.embed_dim {
            return Err(Error::shape(format!(
                "FiLM generator expects embedding length {}, got {}",
                self.embed_dim, h.cols
            )));
        }
        let (n, c, d) = (h.rows, self.channels, self.embed_dim);
        let mut gamma = Matrix::zeros(n, c);
        let mut beta = Matrix::zeros(n, c);
        for r in 0..n {
            gamma.row_mut(r).copy_from_slice(&self.b_gamma.value);
            beta.row_mut(r).copy_from_slice(&self.b_beta.value);
        }
        gemm(n, d, c, &h.data, Op::N, &self.w_gamma.value, Op::T, &mut gamma.data, true);
        gemm(n, d, c, &h.data, Op::N, &self.w_beta.value, Op::T, &mut beta.data, true);
        Ok((gamma, beta))
    }

    /// Accumulate weight gradients; returns the gradient w.r.t. `h`.
    pub fn backward(&mut self, h: &Matrix<T>, dgamma: &Matrix<T>, dbeta: &Matrix<T>) -> Matrix<T> {
        let (n, c, d) = (h.rows, self.channels, self.embed_dim);
        gemm(c, n, d, &dgamma.data, Op::T, &h.data, Op::N, &mut self.w_gamma.grad, true);
        gemm(c, n, d, &dbeta.data, Op::T, &h.data, Op::N, &mut self.w_beta.grad, true);
        for r in 0..n {
            for k in 0..c {
                self.b_gamma.grad[k] += dgamma.row(r)[k];
                self.b_beta.grad[k] += dbeta.row(r)[k];
            }
        }
        let mut dh = Matrix::zeros(n, d);
        gemm(n, c, d, &dgamma.data, Op::N, &self.w_gamma.value, Op::N, &mut dh.data, false);
        gemm(n, c, d, &dbeta.data, Op::N, &self.w_beta.value, Op::N, &mut dh.data, true);
        dh
    }
}

impl<T: Scalar> Module<T> for FilmGenerator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&crate::nn::param_name(prefix, "w_gamma"), &self.w_gamma);
        f(&crate::nn::param_name(prefix, "b_gamma"), &self.b_gamma);
        f(&crate::nn::param_name(prefix, "w_beta"), &self.w_beta);
        f(&crate::nn::param_name(prefix, "b_beta"), &self.b_beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&crate::nn::param_name(prefix, "w_gamma"), &mut self.w_gamma);
        f(&crate::nn::param_name(prefix, "b_gamma"), &mut self.b_gamma);
        f(&crate::nn::param_name(prefix, "w_beta"), &mut self.w_beta);
        f(&crate::nn::param_name(prefix, "b_beta"), &mut self.b_beta);
    }
}

/// `gamma = W_gamma·h + b_gamma`, `beta = W_beta·h + b_beta`.
pub fn film_params<T: Scalar>(h: &[T], gen: &FilmGenerator<T>) -> Result<FilmParams<T>> {
    let hm = Matrix::from_vec(1, h.len(), h.to_vec())?;
    let (gamma, beta) = gen.forward(&hm)?;
    Ok(FilmParams {
        gamma: gamma.data,
        beta: beta.data,
    })
}

/// `out[k,i,j] = z[k,i,j]·gamma[k] + beta[k]`.
pub fn film_modulate<T: Scalar>(z: &FeatureMap<T>, p: &FilmParams<T>) -> Result<FeatureMap<T>> {
    check_channels(z.c, p)?;
    let plane = z.h * z.w;
    let mut out = z.clone();
    for (k, chunk) in out.values.chunks_mut(plane).enumerate() {
        let (g, b) = (p.gamma[k], p.beta[k]);
        chunk.iter_mut().for_each(|v| *v = *v * g + b);
    }
    Ok(out)
}

/// Gradients of [`film_modulate`]: `(dz, dgamma, dbeta)`.
pub fn film_modulate_backward<T: Scalar>(
    z: &FeatureMap<T>,
    p: &FilmParams<T>,
    dout: &FeatureMap<T>,
) -> Result<(FeatureMap<T>, Vec<T>, Vec<T>)> {
    check_channels(z.c, p)?;
    let plane = z.h * z.w;
    let mut dz = dout.clone();
    let mut dgamma = vec![T::zero(); z.c];
    let mut dbeta = vec![T::zero(); z.c];
    for k in 0..z.c {
        let zs = z.plane(k);
        let ds = &mut dz.values[k * plane..(k + 1) * plane];
        for (d, &zv) in ds.iter_mut().zip(zs) {
            dgamma[k] += *d * zv;
            dbeta[k] += *d;
            *d *= p.gamma[k];
        }
    }
    Ok((dz, dgamma, dbeta))
}

fn check_channels<T: Scalar>(c: usize, p: &FilmParams<T>) -> Result<()> {
    if p.gamma.len() != c || p.beta.len() != c {
        return Err(Error::shape(format!(
            "FiLM params of length ({}, {}) cannot modulate {c} channels",
            p.gamma.len(),
            p.beta.len()
        )));
    }
    Ok(())
}

/// Batched modulation; `gamma` and `beta` are `[N, C]`.
pub fn modulate_batch<T: Scalar>(z: &Batch<T>, gamma: &Matrix<T>, beta: &Matrix<T>) -> Batch<T> {
    let mut out = z.clone();
    for k in 0..z.c {
        for s in 0..z.n {
            let (g, b) = (gamma.row(s)[k], beta.row(s)[k]);
            out.map_mut(k, s).iter_mut().for_each(|v| *v = *v * g + b);
        }
    }
    out
}

/// Batched modulation gradients: `(dz, dgamma, dbeta)`.
pub fn modulate_batch_backward<T: Scalar>(
    z: &Batch<T>,
    gamma: &Matrix<T>,
    dout: &Batch<T>,
) -> (Batch<T>, Matrix<T>, Matrix<T>) {
    let mut dz = dout.clone();
    let mut dgamma = Matrix::zeros(z.n, z.c);
    let mut dbeta = Matrix::zeros(z.n, z.c);
    for k in 0..z.c {
        for s in 0..z.n {
            let g = gamma.row(s)[k];
            let (mut sg, mut sb) = (T::zero(), T::zero());
            let zs = z.map(k, s);
            for (d, &zv) in dz.map_mut(k, s).iter_mut().zip(zs) {
                sg += *d * zv;
                sb += *d;
                *d *= g;
            }
            dgamma.row_mut(s)[k] = sg;
            dbeta.row_mut(s)[k] = sb;
        }
    }
    (dz, dgamma, dbeta)
}

/// Mean squared anisotropic total variation:
/// `(1/(C·H·W)) Σ (x[c,i+1,j]−x[c,i,j])² + (x[c,i,j+1]−x[c,i,j])²` over
/// valid neighbour pairs. Zero for a 1×1 image.
pub fn tv_penalty<T: Scalar>(x: &FeatureMap<T>) -> T {
    tv_plane_sum(&x.values, x.c, x.h, x.w) / T::lit((x.c * x.h * x.w).max(1) as f64)
}

/// Gradient of [`tv_penalty`] w.r.t. every pixel.
pub fn tv_penalty_grad<T: Scalar>(x: &FeatureMap<T>) -> FeatureMap<T> {
    let scale = T::one() / T::lit((x.c * x.h * x.w).max(1) as f64);
    let mut g = FeatureMap::zeros(x.c, x.h, x.w);
    tv_plane_grad(&x.values, &mut g.values, x.c, x.h, x.w, scale);
    g
}

/// Batch mean of per-sample [`tv_penalty`] and its gradient.
pub fn tv_penalty_batch<T: Scalar>(x: &Batch<T>) -> (T, Batch<T>) {
    let n_el = T::lit((x.c * x.h * x.w).max(1) as f64);
    let inv_n = T::one() / T::lit(x.n.max(1) as f64);
    let mut total = T::zero();
    let mut grad = x.like();
    let p = x.plane();
    for k in 0..x.c {
        for s in 0..x.n {
            let map = x.map(k, s);
            total += tv_plane_sum(map, 1, x.h, x.w);
            let mut gbuf = vec![T::zero(); p];
            tv_plane_grad(map, &mut gbuf, 1, x.h, x.w, inv_n / n_el);
            grad.map_mut(k, s).copy_from_slice(&gbuf);
        }
    }
    (total / n_el * inv_n, grad)
}

fn tv_plane_sum<T: Scalar>(v: &[T], c: usize, h: usize, w: usize) -> T {
    let mut acc = T::zero();
    for k in 0..c {
        let m = &v[k * h * w..(k + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                let x = m[i * w + j];
                if i + 1 < h {
                    let d = m[(i + 1) * w + j] - x;
                    acc += d * d;
                }
                if j + 1 < w {
                    let d = m[i * w + j + 1] - x;
                    acc += d * d;
                }
            }
        }
    }
    acc
}

fn tv_plane_grad<T: Scalar>(v: &[T], g: &mut [T], c: usize, h: usize, w: usize, scale: T) {
    let two = T::lit(2.0) * scale;
    for k in 0..c {
        let base = k * h * w;
        for i in 0..h {
            for j in 0..w {
                let at = base + i * w + j;
                if i + 1 < h {
                    let d = v[at + w] - v[at];
                    g[at + w] += two * d;
                    g[at] -= two * d;
                }
                if j + 1 < w {
                    let d = v[at + 1] - v[at];
                    g[at + 1] += two * d;
                    g[at] -= two * d;
                }
            }
        }
    }
}

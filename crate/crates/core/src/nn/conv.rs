use rand_chacha::ChaCha8Rng;

use super::param::{join, Module, Param};
use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::{gemm, Batch, Op, Scalar};

/// 2-D convolution with independent row/column strides.
///
/// Weight layout is `[out, in, kh, kw]`. The batch is folded into the GEMM
/// column dimension, so a layer costs one matrix product per pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl<T: Scalar> Conv2d<T> {
    /// Uniform `±1/sqrt(fan_in)` initialization for weights and bias.
    pub fn new(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: (usize, usize),
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: Param::uniform(&[out_c, in_c, kernel, kernel], bound, rng),
            bias: Param::uniform(&[out_c], bound, rng),
            in_c,
            out_c,
            kernel: (kernel, kernel),
            stride,
            pad: (kernel / 2, kernel / 2),
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.pad;
        ((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.pad == (0, 0)
    }

    fn check(&self, x: &Batch<T>) -> Result<()> {
        if x.c != self.in_c {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_c, x.c
            )));
        }
        if x.h + 2 * self.pad.0 < self.kernel.0 || x.w + 2 * self.pad.1 < self.kernel.1 {
            return Err(Error::shape(format!(
                "input {}x{} smaller than kernel",
                x.h, x.w
            )));
        }
        Ok(())
    }

    /// Rows `(ci, ky, kx)`, columns `(n, oy, ox)`.
    fn im2col(&self, x: &Batch<T>, ho: usize, wo: usize) -> Vec<T> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = (self.pad.0 as isize, self.pad.1 as isize);
        let ncols = x.n * ho * wo;
        let mut cols = vec![T::zero(); self.in_c * kh * kw * ncols];
        exec::for_each_chunk(&mut cols, ncols, |r, row| {
            let ci = r / (kh * kw);
            let ky = (r / kw) % kh;
            let kx = r % kw;
            for s in 0..x.n {
                let src = x.map(ci, s);
                let dst = &mut row[s * ho * wo..(s + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * sh + ky) as isize - ph;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    let src_row = &src[iy as usize * x.w..(iy as usize + 1) * x.w];
                    let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * sw + kx) as isize - pw;
                        if ix >= 0 && ix < x.w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        });
        cols
    }

    fn col2im(&self, dcols: &[T], n: usize, h: usize, w: usize, ho: usize, wo: usize) -> Batch<T> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = (self.pad.0 as isize, self.pad.1 as isize);
        let ncols = n * ho * wo;
        let mut dx = Batch::zeros(self.in_c, n, h, w);
        exec::for_each_chunk(&mut dx.data, n * h * w, |ci, chan| {
            for ky in 0..kh {
                for kx in 0..kw {
                    let r = (ci * kh + ky) * kw + kx;
                    let row = &dcols[r * ncols..(r + 1) * ncols];
                    for s in 0..n {
                        let src = &row[s * ho * wo..(s + 1) * ho * wo];
                        let dst = &mut chan[s * h * w..(s + 1) * h * w];
                        for oy in 0..ho {
                            let iy = (oy * sh + ky) as isize - ph;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let iy = iy as usize;
                            for ox in 0..wo {
                                let ix = (ox * sw + kx) as isize - pw;
                                if ix >= 0 && ix < w as isize {
                                    dst[iy * w + ix as usize] += src[oy * wo + ox];
                                }
                            }
                        }
                    }
                }
            }
        });
        dx
    }

    pub fn forward(&self, x: &Batch<T>) -> Result<Batch<T>> {
        self.check(x)?;
        let (ho, wo) = self.out_size(x.h, x.w);
        let ncols = x.n * ho * wo;
        let ck = self.in_c * self.kernel.0 * self.kernel.1;
        let mut y = Batch::zeros(self.out_c, x.n, ho, wo);
        if self.is_pointwise() {
            gemm(self.out_c, ck, ncols, &self.weight.value, Op::N, &x.data, Op::N, &mut y.data, false);
        } else {
            let cols = self.im2col(x, ho, wo);
            gemm(self.out_c, ck, ncols, &self.weight.value, Op::N, &cols, Op::N, &mut y.data, false);
        }
        let bias = &self.bias.value;
        exec::for_each_chunk(&mut y.data, ncols, |o, row| {
            let b = bias[o];
            row.iter_mut().for_each(|v| *v += b);
        });
        Ok(y)
    }

    /// Accumulate weight/bias gradients for input `x` and output gradient
    /// `dy`; returns the input gradient.
    pub fn backward(&mut self, x: &Batch<T>, dy: &Batch<T>) -> Batch<T> {
        let (ho, wo) = self.out_size(x.h, x.w);
        debug_assert_eq!((dy.c, dy.n, dy.h, dy.w), (self.out_c, x.n, ho, wo));
        let ncols = x.n * ho * wo;
        let ck = self.in_c * self.kernel.0 * self.kernel.1;

        for (o, g) in self.bias.grad.iter_mut().enumerate() {
            let mut acc = T::zero();
            for &v in dy.channel(o) {
                acc += v;
            }
            *g += acc;
        }

        if self.is_pointwise() {
            gemm(self.out_c, ncols, ck, &dy.data, Op::N, &x.data, Op::T, &mut self.weight.grad, true);
            let mut dx = x.like();
            gemm(ck, self.out_c, ncols, &self.weight.value, Op::T, &dy.data, Op::N, &mut dx.data, false);
            return dx;
        }

        let cols = self.im2col(x, ho, wo);
        gemm(self.out_c, ncols, ck, &dy.data, Op::N, &cols, Op::T, &mut self.weight.grad, true);
        drop(cols);
        let mut dcols = vec![T::zero(); ck * ncols];
        gemm(ck, self.out_c, ncols, &self.weight.value, Op::T, &dy.data, Op::N, &mut dcols, false);
        self.col2im(&dcols, x.n, x.h, x.w, ho, wo)
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

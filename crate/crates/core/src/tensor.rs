//! Dense storage shared by every layer.
//!
//! Activations flowing through the networks are kept in a channel-major
//! batch layout `[C, N, H, W]`: each channel is one contiguous row of
//! `N·H·W` values. Convolutions then reduce to one GEMM per layer with the
//! batch folded into the column dimension, and batch normalization works on
//! contiguous rows.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating point element type usable by the layer library.
///
/// Training runs in `f32`; gradient checks run the same code in `f64`.
pub trait Scalar:
    Float + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + 'static
{
    /// `C = alpha·op(A)·op(B) + beta·C` with explicit row/column strides.
    ///
    /// # Safety
    /// Pointers must address at least the extents implied by the dimensions
    /// and strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        <f64 as num_traits::NumCast>::from(self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Whether a GEMM operand is read as stored or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// Row-major matrix product `c (m×n) = a·b (+ c when accumulate)`.
///
/// `a` is stored `m×k` (or `k×m` when `ta == Op::T`); `b` is stored `k×n`
/// (or `n×k` when `tb == Op::T`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: Op,
    b: &[T],
    tb: Op,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k, "gemm: lhs too short");
    assert!(b.len() >= k * n, "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match ta {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: extents checked above; strides describe dense row-major storage.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// A batch of feature maps in channel-major layout `[C, N, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            n,
            h,
            w,
            data: vec![T::zero(); c * n * h * w],
        }
    }

    pub fn from_vec(c: usize, n: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != c * n * h * w {
            return Err(Error::shape(format!(
                "batch [{c},{n},{h},{w}] needs {} values, got {}",
                c * n * h * w,
                data.len()
            )));
        }
        Ok(Self { c, n, h, w, data })
    }

    pub fn like(&self) -> Self {
        Self::zeros(self.c, self.n, self.h, self.w)
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.c, self.n, self.h, self.w)
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    /// Spatial size of one map.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Length of one channel row (`N·H·W`).
    pub fn row(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let r = self.row();
        &self.data[c * r..(c + 1) * r]
    }

    /// The `H·W` plane of channel `c`, sample `n`.
    pub fn map(&self, c: usize, n: usize) -> &[T] {
        let p = self.plane();
        let start = (c * self.n + n) * p;
        &self.data[start..start + p]
    }

    pub fn map_mut(&mut self, c: usize, n: usize) -> &mut [T] {
        let p = self.plane();
        let start = (c * self.n + n) * p;
        &mut self.data[start..start + p]
    }

    /// Convert from sample-major `[N, C, H, W]` storage.
    pub fn from_nchw(n: usize, c: usize, h: usize, w: usize, nchw: &[T]) -> Result<Self> {
        if nchw.len() != n * c * h * w {
            return Err(Error::shape(format!(
                "expected {} values for [{n},{c},{h},{w}], got {}",
                n * c * h * w,
                nchw.len()
            )));
        }
        let p = h * w;
        let mut out = Self::zeros(c, n, h, w);
        for s in 0..n {
            for ch in 0..c {
                let src = &nchw[(s * c + ch) * p..(s * c + ch + 1) * p];
                out.map_mut(ch, s).copy_from_slice(src);
            }
        }
        Ok(out)
    }

    /// Extract sample `s` as a `[C, H, W]` vector.
    pub fn sample(&self, s: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(self.c * self.plane());
        for ch in 0..self.c {
            out.extend_from_slice(self.map(ch, s));
        }
        out
    }

    /// Copy of a subset of samples, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut out = Self::zeros(self.c, idx.len(), self.h, self.w);
        for ch in 0..self.c {
            for (k, &s) in idx.iter().enumerate() {
                out.map_mut(ch, k).copy_from_slice(self.map(ch, s));
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_dims(other));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        if (a.n, a.h, a.w) != (b.n, b.h, b.w) {
            return Err(Error::shape(format!(
                "cannot concatenate [{},{},{},{}] with [{},{},{},{}]",
                a.c, a.n, a.h, a.w, b.c, b.n, b.h, b.w
            )));
        }
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Self {
            c: a.c + b.c,
            n: a.n,
            h: a.h,
            w: a.w,
            data,
        })
    }

    /// Split along the channel axis at `c0`.
    pub fn split_channels(&self, c0: usize) -> (Self, Self) {
        let cut = c0 * self.row();
        (
            Self {
                c: c0,
                n: self.n,
                h: self.h,
                w: self.w,
                data: self.data[..cut].to_vec(),
            },
            Self {
                c: self.c - c0,
                n: self.n,
                h: self.h,
                w: self.w,
                data: self.data[cut..].to_vec(),
            },
        )
    }

    pub fn cast<U: Scalar>(&self) -> Batch<U> {
        Batch {
            c: self.c,
            n: self.n,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Row-major matrix used for dense layers and embeddings (`rows × cols`).
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut out = Self::zeros(idx.len(), self.cols);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }
}

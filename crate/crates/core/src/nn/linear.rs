use rand_chacha::ChaCha8Rng;

use super::param::{join, Module, Param};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Matrix, Op, Scalar};

/// Dense layer `y = x·Wᵀ + b` over row-major `[N, in]` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            weight: Param::uniform(&[out_dim, in_dim], bound, rng),
            bias: Param::uniform(&[out_dim], bound, rng),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols != self.in_dim {
            return Err(Error::shape(format!(
                "linear expects {} inputs, got {}",
                self.in_dim, x.cols
            )));
        }
        let mut y = Matrix::zeros(x.rows, self.out_dim);
        for r in 0..x.rows {
            y.row_mut(r).copy_from_slice(&self.bias.value);
        }
        gemm(x.rows, self.in_dim, self.out_dim, &x.data, Op::N, &self.weight.value, Op::T, &mut y.data, true);
        Ok(y)
    }

    pub fn backward(&mut self, x: &Matrix<T>, dy: &Matrix<T>) -> Matrix<T> {
        gemm(self.out_dim, x.rows, self.in_dim, &dy.data, Op::T, &x.data, Op::N, &mut self.weight.grad, true);
        for r in 0..dy.rows {
            for (g, &d) in self.bias.grad.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        let mut dx = Matrix::zeros(x.rows, self.in_dim);
        gemm(x.rows, self.out_dim, self.in_dim, &dy.data, Op::N, &self.weight.value, Op::N, &mut dx.data, false);
        dx
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

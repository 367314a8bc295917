//! Gated recurrent unit over variable-length batches.
//!
//! Gates follow the reset/update/candidate convention:
//!
//! ```text
//! r  = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z  = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r ∘ (W_hn h + b_hn))
//! h' = (1 − z) ∘ n + z ∘ h
//! ```
//!
//! Rows whose sequence has ended keep their hidden state, so the final state
//! of every row depends only on its own tokens.

use rand_chacha::ChaCha8Rng;

use crate::nn::{param_name, sigmoid, Module, Param};
use crate::tensor::{gemm, Matrix, Op, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Gru<T> {
    /// `[3H, D]`, gate blocks ordered r, z, n.
    pub w_input: Param<T>,
    /// `[3H, H]`
    pub w_hidden: Param<T>,
    pub b_input: Param<T>,
    pub b_hidden: Param<T>,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

struct Step<T> {
    x: Matrix<T>,
    h_prev: Matrix<T>,
    r: Matrix<T>,
    z: Matrix<T>,
    n: Matrix<T>,
    /// `W_hn h + b_hn`
    hn: Matrix<T>,
    active: Vec<bool>,
}

/// Activations kept for backpropagation through time.
pub struct GruTrace<T> {
    steps: Vec<Step<T>>,
}

impl<T: Scalar> Gru<T> {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        Self {
            w_input: Param::uniform(&[3 * hidden_dim, input_dim], bound, rng),
            w_hidden: Param::uniform(&[3 * hidden_dim, hidden_dim], bound, rng),
            b_input: Param::uniform(&[3 * hidden_dim], bound, rng),
            b_hidden: Param::uniform(&[3 * hidden_dim], bound, rng),
            input_dim,
            hidden_dim,
        }
    }

    /// Run over `inputs[t]` (`[N, D]` per step) with `lengths[i]` valid steps
    /// per row, starting from the zero state. Returns the final hidden states.
    pub fn forward(&self, inputs: &[Matrix<T>], lengths: &[usize]) -> (Matrix<T>, GruTrace<T>) {
        let n = lengths.len();
        let hd = self.hidden_dim;
        let mut h = Matrix::zeros(n, hd);
        let mut steps = Vec::with_capacity(inputs.len());
        for (t, x) in inputs.iter().enumerate() {
            let active: Vec<bool> = lengths.iter().map(|&l| t < l).collect();
            let mut gi = Matrix::zeros(n, 3 * hd);
            let mut gh = Matrix::zeros(n, 3 * hd);
            for row in 0..n {
                gi.row_mut(row).copy_from_slice(&self.b_input.value);
                gh.row_mut(row).copy_from_slice(&self.b_hidden.value);
            }
            gemm(n, self.input_dim, 3 * hd, &x.data, Op::N, &self.w_input.value, Op::T, &mut gi.data, true);
            gemm(n, hd, 3 * hd, &h.data, Op::N, &self.w_hidden.value, Op::T, &mut gh.data, true);

            let mut r = Matrix::zeros(n, hd);
            let mut z = Matrix::zeros(n, hd);
            let mut cand = Matrix::zeros(n, hd);
            let mut hn = Matrix::zeros(n, hd);
            let mut h_next = h.clone();
            for row in 0..n {
                if !active[row] {
                    continue;
                }
                let (gir, ghr) = (gi.row(row), gh.row(row));
                for j in 0..hd {
                    let rv = sigmoid(gir[j] + ghr[j]);
                    let zv = sigmoid(gir[hd + j] + ghr[hd + j]);
                    let hnv = ghr[2 * hd + j];
                    let nv = (gir[2 * hd + j] + rv * hnv).tanh();
                    r.row_mut(row)[j] = rv;
                    z.row_mut(row)[j] = zv;
                    hn.row_mut(row)[j] = hnv;
                    cand.row_mut(row)[j] = nv;
                    h_next.row_mut(row)[j] = (T::one() - zv) * nv + zv * h.row(row)[j];
                }
            }
            steps.push(Step {
                x: x.clone(),
                h_prev: h,
                r,
                z,
                n: cand,
                hn,
                active,
            });
            h = h_next;
        }
        (h, GruTrace { steps })
    }

    /// Backpropagate `dh_final`; accumulates weight gradients and returns the
    /// per-step input gradients.
    pub fn backward(&mut self, trace: &GruTrace<T>, dh_final: &Matrix<T>) -> Vec<Matrix<T>> {
        let hd = self.hidden_dim;
        let mut dh = dh_final.clone();
        let mut dxs = vec![Matrix::zeros(0, 0); trace.steps.len()];
        for (t, st) in trace.steps.iter().enumerate().rev() {
            let n = dh.rows;
            let mut dgi = Matrix::zeros(n, 3 * hd);
            let mut dgh = Matrix::zeros(n, 3 * hd);
            let mut dh_prev = Matrix::zeros(n, hd);
            for row in 0..n {
                if !st.active[row] {
                    dh_prev.row_mut(row).copy_from_slice(dh.row(row));
                    continue;
                }
                for j in 0..hd {
                    let d = dh.row(row)[j];
                    let (rv, zv, nv, hnv) = (st.r.row(row)[j], st.z.row(row)[j], st.n.row(row)[j], st.hn.row(row)[j]);
                    let hp = st.h_prev.row(row)[j];
                    let dn = d * (T::one() - zv);
                    let dz = d * (hp - nv);
                    dh_prev.row_mut(row)[j] = d * zv;
                    let dan = dn * (T::one() - nv * nv);
                    let dar = dan * hnv * rv * (T::one() - rv);
                    let daz = dz * zv * (T::one() - zv);
                    let gi = dgi.row_mut(row);
                    gi[j] = dar;
                    gi[hd + j] = daz;
                    gi[2 * hd + j] = dan;
                    let gh = dgh.row_mut(row);
                    gh[j] = dar;
                    gh[hd + j] = daz;
                    gh[2 * hd + j] = dan * rv;
                }
            }
            gemm(3 * hd, n, self.input_dim, &dgi.data, Op::T, &st.x.data, Op::N, &mut self.w_input.grad, true);
            gemm(3 * hd, n, hd, &dgh.data, Op::T, &st.h_prev.data, Op::N, &mut self.w_hidden.grad, true);
            for row in 0..n {
                for (g, &v) in self.b_input.grad.iter_mut().zip(dgi.row(row)) {
                    *g += v;
                }
                for (g, &v) in self.b_hidden.grad.iter_mut().zip(dgh.row(row)) {
                    *g += v;
                }
            }
            let mut dx = Matrix::zeros(n, self.input_dim);
            gemm(n, 3 * hd, self.input_dim, &dgi.data, Op::N, &self.w_input.value, Op::N, &mut dx.data, false);
            gemm(n, 3 * hd, hd, &dgh.data, Op::N, &self.w_hidden.value, Op::N, &mut dh_prev.data, true);
            dxs[t] = dx;
            dh = dh_prev;
        }
        dxs
    }
}

impl<T: Scalar> Module<T> for Gru<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&param_name(prefix, "w_input"), &self.w_input);
        f(&param_name(prefix, "w_hidden"), &self.w_hidden);
        f(&param_name(prefix, "b_input"), &self.b_input);
        f(&param_name(prefix, "b_hidden"), &self.b_hidden);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&param_name(prefix, "w_input"), &mut self.w_input);
        f(&param_name(prefix, "w_hidden"), &mut self.w_hidden);
        f(&param_name(prefix, "b_input"), &mut self.b_input);
        f(&param_name(prefix, "b_hidden"), &mut self.b_hidden);
    }
}

//! Pairwise ranking loss and cosine retrieval.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Matrix, Op, Scalar};

pub const DEFAULT_MARGIN: f64 = 0.2;

fn normalized<T: Scalar>(x: &Matrix<T>) -> (Matrix<T>, Vec<T>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = out.row_mut(r);
        let n = row
            .iter()
            .fold(T::zero(), |a, &v| a + v * v)
            .sqrt()
            .max(T::lit(1e-12));
        row.iter_mut().for_each(|v| *v = *v / n);
        norms.push(n);
    }
    (out, norms)
}

/// Cosine similarity matrix `S[i][j] = cos(a_i, b_j)`.
pub fn cosine_matrix<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let (ua, _) = normalized(a);
    let (ub, _) = normalized(b);
    let mut s = Matrix::zeros(a.rows, b.rows);
    gemm(a.rows, a.cols, b.rows, &ua.data, Op::N, &ub.data, Op::T, &mut s.data, false);
    s
}

fn check<T: Scalar>(img: &Matrix<T>, txt: &Matrix<T>) -> Result<()> {
    if img.rows != txt.rows || img.cols != txt.cols {
        return Err(Error::shape(format!(
            "ranking loss needs aligned batches, got {}x{} and {}x{}",
            img.rows, img.cols, txt.rows, txt.cols
        )));
    }
    if img.rows < 2 {
        return Err(Error::validation("ranking loss needs at least 2 pairs"));
    }
    Ok(())
}

/// Loss and `dL/dS` from a similarity matrix.
fn hinge<T: Scalar>(s: &Matrix<T>, margin: T) -> (T, Matrix<T>) {
    let n = s.rows;
    let scale = T::one() / T::lit((n * (n - 1)) as f64);
    let mut loss = T::zero();
    let mut ds = Matrix::zeros(n, n);
    for i in 0..n {
        let sii = s.row(i)[i];
        for j in 0..n {
            if j == i {
                continue;
            }
            let a = margin - sii + s.row(i)[j];
            if a > T::zero() {
                loss += a;
                ds.row_mut(i)[i] -= scale;
                ds.row_mut(i)[j] += scale;
            }
            let b = margin - sii + s.row(j)[i];
            if b > T::zero() {
                loss += b;
                ds.row_mut(i)[i] -= scale;
                ds.row_mut(j)[i] += scale;
            }
        }
    }
    (loss * scale, ds)
}

/// Symmetric hinge over cosine similarities; row `i` of both batches is a
/// matching pair.
pub fn ranking_loss<T: Scalar>(img: &Matrix<T>, txt: &Matrix<T>, margin: T) -> Result<T> {
    check(img, txt)?;
    Ok(hinge(&cosine_matrix(img, txt), margin).0)
}

/// Loss with gradients w.r.t. the unnormalized image and text embeddings.
pub fn ranking_loss_grad<T: Scalar>(
    img: &Matrix<T>,
    txt: &Matrix<T>,
    margin: T,
) -> Result<(T, Matrix<T>, Matrix<T>)> {
    check(img, txt)?;
    let (n, d) = (img.rows, img.cols);
    let (ui, ni) = normalized(img);
    let (ut, nt) = normalized(txt);
    let mut s = Matrix::zeros(n, n);
    gemm(n, d, n, &ui.data, Op::N, &ut.data, Op::T, &mut s.data, false);
    let (loss, ds) = hinge(&s, margin);
    let mut dui = Matrix::zeros(n, d);
    gemm(n, n, d, &ds.data, Op::N, &ut.data, Op::N, &mut dui.data, false);
    let mut dut = Matrix::zeros(n, d);
    gemm(n, n, d, &ds.data, Op::T, &ui.data, Op::N, &mut dut.data, false);
    Ok((loss, unnormalize(&ui, &ni, &dui), unnormalize(&ut, &nt, &dut)))
}

/// Chain `du` through `u = x/‖x‖`, given `u` and `‖x‖`.
fn unnormalize<T: Scalar>(u: &Matrix<T>, norms: &[T], du: &Matrix<T>) -> Matrix<T> {
    let mut dx = Matrix::zeros(u.rows, u.cols);
    for r in 0..u.rows {
        let (ur, dr) = (u.row(r), du.row(r));
        let dot = ur.iter().zip(dr).fold(T::zero(), |a, (&x, &y)| a + x * y);
        for ((o, &uv), &g) in dx.row_mut(r).iter_mut().zip(ur).zip(dr) {
            *o = (g - uv * dot) / norms[r];
        }
    }
    dx
}

/// Indices of the `k` most cosine-similar corpus rows, best first; ties go to
/// the lower index.
pub fn retrieve_topk(query: &[f32], corpus: &[Vec<f32>], k: usize) -> Result<Vec<usize>> {
    if corpus.is_empty() {
        return Err(Error::validation("retrieval corpus is empty"));
    }
    if k > corpus.len() {
        return Err(Error::validation(format!(
            "k = {k} exceeds corpus size {}",
            corpus.len()
        )));
    }
    let norm = |v: &[f32]| v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt().max(1e-12);
    let qn = norm(query);
    let mut scored = corpus
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.len() != query.len() {
                return Err(Error::shape(format!(
                    "corpus entry {i} has length {}, query {}",
                    c.len(),
                    query.len()
                )));
            }
            let dot: f64 = c.iter().zip(query).map(|(a, b)| *a as f64 * *b as f64).sum();
            Ok((dot / (norm(c) * qn), i))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, i)| i).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn perfectly_separated_batch_has_zero_loss() {
        let v = m(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        assert_eq!(ranking_loss(&v, &v, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn equal_similarities_cost_twice_the_margin() {
        // Every pair has cosine 1, so both hinge terms are exactly the margin.
        let v = m(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let t = m(&[&[2.0, 0.0], &[3.0, 0.0]]);
        assert!((ranking_loss(&v, &t, 0.2).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn single_pair_is_rejected() {
        let v = m(&[&[1.0, 0.0]]);
        assert!(matches!(ranking_loss(&v, &v, 0.2), Err(Error::Validation(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let img = m(&[&[0.3, -0.2, 0.9], &[0.1, 0.8, -0.4], &[-0.5, 0.2, 0.3]]);
        let txt = m(&[&[0.2, 0.1, 0.7], &[0.6, 0.3, -0.2], &[0.4, -0.6, 0.1]]);
        let margin = 0.5;
        let (_, di, dt) = ranking_loss_grad(&img, &txt, margin).unwrap();
        let eps = 1e-6;
        for (which, grad) in [(0, &di), (1, &dt)] {
            for k in 0..9 {
                let bump = |delta: f64| {
                    let (mut a, mut b) = (img.clone(), txt.clone());
                    if which == 0 {
                        a.data[k] += delta;
                    } else {
                        b.data[k] += delta;
                    }
                    ranking_loss(&a, &b, margin).unwrap()
                };
                let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
                let rel = (fd - grad.data[k]).abs() / fd.abs().max(grad.data[k].abs()).max(1e-8);
                assert!(rel < 1e-4 || (fd - grad.data[k]).abs() < 1e-9, "{which}/{k}: {fd} vs {}", grad.data[k]);
            }
        }
    }

    #[test]
    fn self_retrieval_and_tie_breaking() {
        let corpus: Vec<Vec<f32>> = (0..10)
            .map(|i| (0..10).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let mut q = corpus[7].clone();
        q[3] += 1e-3;
        assert_eq!(retrieve_topk(&q, &corpus, 1).unwrap(), vec![7]);
        let tied = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(retrieve_topk(&[1.0, 0.0], &tied, 3).unwrap(), vec![0, 1, 2]);
        assert!(retrieve_topk(&[1.0], &[], 1).is_err());
        assert!(retrieve_topk(&[1.0], &[vec![1.0]], 2).is_err());
    }
}

//! Inception Score and Fréchet distance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-6;
const EIG_CLIP: f64 = -1e-8;
const RESULT_CLAMP: f64 = -1e-6;

/// Number of IS splits for `n` samples: 10, reduced to `⌊n/100⌋` (at least
/// 1) for small sets.
pub fn default_splits(n: usize) -> usize {
    if n >= 1000 {
        10
    } else {
        (n / 100).max(1)
    }
}

/// `exp(E_x KL(p(y|x) ‖ p̄(y)))` per split; returns mean and (population)
/// standard deviation over splits.
pub fn inception_score(probs: &[Vec<f64>], splits: usize) -> Result<(f64, f64)> {
    let n = probs.len();
    if splits == 0 || n < splits {
        return Err(Error::validation(format!("need at least {splits} rows for {splits} splits, got {n}")));
    }
    let k = probs[0].len();
    for (i, row) in probs.iter().enumerate() {
        let s: f64 = row.iter().sum();
        if row.len() != k || (s - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::validation(format!("row {i} is not a probability distribution (sum {s})")));
        }
    }
    let mut scores = Vec::with_capacity(splits);
    for s in 0..splits {
        let part = &probs[s * n / splits..(s + 1) * n / splits];
        let mut marginal = vec![0.0; k];
        for row in part {
            marginal.iter_mut().zip(row).for_each(|(m, p)| *m += p);
        }
        marginal.iter_mut().for_each(|m| *m /= part.len() as f64);
        let kl: f64 = part
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&marginal)
                    .filter(|(&p, _)| p > 0.0)
                    .map(|(&p, &m)| p * (p.ln() - m.ln()))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / part.len() as f64;
        scores.push(kl.exp());
    }
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// Sample mean and symmetrized `N−1` covariance of `N×D` feature rows.
pub fn gaussian_stats(features: &[Vec<f64>]) -> Result<FeatureStats> {
    let n = features.len();
    if n < 2 {
        return Err(Error::validation("feature statistics need at least 2 rows"));
    }
    let d = features[0].len();
    if features.iter().any(|r| r.len() != d) {
        return Err(Error::shape("feature rows have different lengths"));
    }
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mu = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let mut centered = x;
    for j in 0..d {
        let m = mu[j];
        centered.column_mut(j).iter_mut().for_each(|v| *v -= m);
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let sigma = (&cov + cov.transpose()) * 0.5;
    Ok(FeatureStats { mu, sigma })
}

fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < EIG_CLIP {
            return Err(Error::numeric("fid", format!("{what} has eigenvalue {v}")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2(ΣaΣb)^{1/2})`.
///
/// The trace of `(ΣaΣb)^{1/2}` is computed as the trace of the symmetric
/// `(Σa^{1/2} Σb Σa^{1/2})^{1/2}`, which has the same eigenvalues.
pub fn fid(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    let d = a.mu.len();
    if b.mu.len() != d || a.sigma.shape() != (d, d) || b.sigma.shape() != (d, d) {
        return Err(Error::shape(format!(
            "feature statistics of dimension {d} and {} differ",
            b.mu.len()
        )));
    }
    let diff = &a.mu - &b.mu;
    let sa = psd_sqrt(&a.sigma, "sigma_a")?;
    let inner = &sa * &b.sigma * &sa;
    let cross = psd_sqrt(&inner, "sqrt(sigma_a) sigma_b sqrt(sigma_a)")?;
    let value = diff.dot(&diff) + a.sigma.trace() + b.sigma.trace() - 2.0 * cross.trace();
    if value < RESULT_CLAMP {
        return Err(Error::numeric("fid", format!("negative distance {value}")));
    }
    Ok(value.max(0.0))
}

use super::param::{join, Module, Param};
use super::Mode;
use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::{Batch, Scalar};

/// Per-channel statistics used by one normalization pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    pub mode: Mode,
    /// Elements per channel in the batch that produced the statistics.
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Param::filled(&[c], T::one()),
            beta: Param::zeros(&[c]),
            running_mean: Param::buffer(&[c], T::zero()),
            running_var: Param::buffer(&[c], T::one()),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Batch<T>, mode: Mode) -> Result<(Batch<T>, BnStats<T>)> {
        let c = self.channels();
        if x.c != c {
            return Err(Error::shape(format!(
                "batch norm over {c} channels got {}",
                x.c
            )));
        }
        let m = x.row();
        let eps = T::lit(self.eps);
        let (mean, var) = match mode {
            Mode::Train => {
                let mf = T::lit(m as f64);
                let stats = exec::map_indices(c, |ch| {
                    let row = x.channel(ch);
                    let mut s = T::zero();
                    for &v in row {
                        s += v;
                    }
                    let mu = s / mf;
                    let mut q = T::zero();
                    for &v in row {
                        q += (v - mu) * (v - mu);
                    }
                    (mu, q / mf)
                });
                stats.into_iter().unzip()
            }
            Mode::Eval => (
                self.running_mean.value.clone(),
                self.running_var.value.clone(),
            ),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut y = x.clone();
        let (g, b) = (&self.gamma.value, &self.beta.value);
        exec::for_each_chunk(&mut y.data, m, |ch, row| {
            let scale = g[ch] * inv_std[ch];
            let shift = b[ch] - mean[ch] * scale;
            row.iter_mut().for_each(|v| *v = *v * scale + shift);
        });
        Ok((
            y,
            BnStats {
                mean,
                var,
                inv_std,
                mode,
                count: m,
            },
        ))
    }

    /// Fold batch statistics into the running estimates.
    pub fn commit(&mut self, stats: &BnStats<T>) {
        if stats.mode != Mode::Train {
            return;
        }
        let mom = T::lit(self.momentum);
        let unbias = if stats.count > 1 {
            T::lit(stats.count as f64 / (stats.count as f64 - 1.0))
        } else {
            T::one()
        };
        for ch in 0..self.channels() {
            let rm = &mut self.running_mean.value[ch];
            *rm = (T::one() - mom) * *rm + mom * stats.mean[ch];
            let rv = &mut self.running_var.value[ch];
            *rv = (T::one() - mom) * *rv + mom * stats.var[ch] * unbias;
        }
    }

    pub fn backward(&mut self, x: &Batch<T>, stats: &BnStats<T>, dy: &Batch<T>) -> Batch<T> {
        let c = self.channels();
        let m = x.row();
        let mf = T::lit(m as f64);
        let g = &self.gamma.value;
        // Per-channel reductions: Σdy and Σdy·x̂.
        let sums = exec::map_indices(c, |ch| {
            let (mu, inv) = (stats.mean[ch], stats.inv_std[ch]);
            let mut sd = T::zero();
            let mut sdx = T::zero();
            for (&d, &v) in dy.channel(ch).iter().zip(x.channel(ch)) {
                sd += d;
                sdx += d * (v - mu) * inv;
            }
            (sd, sdx)
        });
        let mut dx = x.like();
        exec::for_each_chunk(&mut dx.data, m, |ch, row| {
            let (mu, inv) = (stats.mean[ch], stats.inv_std[ch]);
            let (sd, sdx) = sums[ch];
            let k = g[ch] * inv;
            let xr = x.channel(ch);
            let dr = dy.channel(ch);
            match stats.mode {
                Mode::Train => {
                    for i in 0..m {
                        let xhat = (xr[i] - mu) * inv;
                        row[i] = k * (dr[i] - sd / mf - xhat * sdx / mf);
                    }
                }
                Mode::Eval => {
                    for i in 0..m {
                        row[i] = k * dr[i];
                    }
                }
            }
        });
        for (ch, &(sd, sdx)) in sums.iter().enumerate() {
            self.gamma.grad[ch] += sdx;
            self.beta.grad[ch] += sd;
        }
        dx
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_rng;

    #[test]
    fn train_mode_normalizes_each_channel() {
        let p = Param::<f64>::uniform(&[2 * 3 * 4 * 2], 3.0, &mut init_rng(1));
        let x = Batch::from_vec(2, 3, 4, 2, p.value).unwrap();
        let bn = BatchNorm2d::<f64>::new(2);
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for ch in 0..2 {
            let row = y.channel(ch);
            let mean: f64 = row.iter().sum::<f64>() / row.len() as f64;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn backward_matches_finite_differences_in_both_modes() {
        let p = Param::<f64>::uniform(&[2 * 2 * 3 * 2], 2.0, &mut init_rng(4));
        let x = Batch::from_vec(2, 2, 3, 2, p.value).unwrap();
        let gp = Param::<f64>::uniform(&[x.data.len()], 1.0, &mut init_rng(5));
        let mut bn = BatchNorm2d::<f64>::new(2);
        bn.gamma.value = vec![1.3, -0.7];
        bn.beta.value = vec![0.2, 0.1];
        bn.running_mean.value = vec![0.3, -0.1];
        bn.running_var.value = vec![1.5, 0.8];
        for mode in [Mode::Train, Mode::Eval] {
            let loss = |b: &BatchNorm2d<f64>, x: &Batch<f64>| -> f64 {
                let (y, _) = b.forward(x, mode).unwrap();
                y.data.iter().zip(&gp.value).map(|(a, g)| a * g).sum()
            };
            let (_, stats) = bn.forward(&x, mode).unwrap();
            let dyb = Batch::from_vec(2, 2, 3, 2, gp.value.clone()).unwrap();
            bn.zero_grad();
            let dx = bn.backward(&x, &stats, &dyb);
            let eps = 1e-6;
            for i in 0..x.data.len() {
                let mut xp = x.clone();
                xp.data[i] += eps;
                let mut xm = x.clone();
                xm.data[i] -= eps;
                let fd = (loss(&bn, &xp) - loss(&bn, &xm)) / (2.0 * eps);
                assert!((fd - dx.data[i]).abs() < 1e-6, "{mode:?} dx[{i}]");
            }
            for ch in 0..2 {
                let mut bp = bn.clone();
                bp.gamma.value[ch] += eps;
                let mut bm = bn.clone();
                bm.gamma.value[ch] -= eps;
                let fd = (loss(&bp, &x) - loss(&bm, &x)) / (2.0 * eps);
                assert!((fd - bn.gamma.grad[ch]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn commit_moves_running_stats_toward_batch() {
        let x = Batch::from_vec(1, 2, 1, 2, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let mut bn = BatchNorm2d::<f64>::new(1);
        let (_, stats) = bn.forward(&x, Mode::Train).unwrap();
        bn.commit(&stats);
        assert!((bn.running_mean.value[0] - 0.4).abs() < 1e-12);
        // unbiased variance of {1,3,5,7} is 20/3
        assert!((bn.running_var.value[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
    }
}

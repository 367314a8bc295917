use rand_chacha::ChaCha8Rng;

use super::unit::{Act, ConvUnit, UnitTrace};
use crate::error::{Error, Result};
use crate::film::{modulate_batch, modulate_batch_backward, FilmGenerator};
use crate::nn::{param_name, Mode, Module, Param};
use crate::tensor::{Batch, Matrix, Scalar};

/// `z + bn2(conv2(act(film(bn1(conv1(z))))))`, with the FiLM step optional.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock<T> {
    /// conv1 + bn1, activation applied after modulation.
    pub first: ConvUnit<T>,
    pub film: Option<FilmGenerator<T>>,
    pub second: ConvUnit<T>,
    pub act: Act,
}

pub struct BlockTrace<T> {
    first: UnitTrace<T>,
    /// (gamma, beta) when modulation ran.
    film: Option<(Matrix<T>, Matrix<T>)>,
    /// Activation output, input of the second conv.
    hidden: Batch<T>,
    second: UnitTrace<T>,
    pub out: Batch<T>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(channels: usize, act: Act, film: Option<FilmGenerator<T>>, rng: &mut ChaCha8Rng) -> Self {
        Self {
            first: ConvUnit::new(channels, channels, 3, (1, 1), true, Act::Identity, rng),
            film,
            second: ConvUnit::new(channels, channels, 3, (1, 1), true, Act::Identity, rng),
            act,
        }
    }

    pub fn channels(&self) -> usize {
        self.first.conv.in_c
    }

    /// `h` is `[N, d]`; modulation runs only when `modulate` is set and the
    /// block owns a FiLM generator.
    pub fn forward(&self, z: Batch<T>, h: &Matrix<T>, modulate: bool, mode: Mode) -> Result<BlockTrace<T>> {
        if z.c != self.channels() {
            return Err(Error::shape(format!(
                "residual block over {} channels got {}",
                self.channels(),
                z.c
            )));
        }
        let first = self.first.forward(z, mode)?;
        let (mut hidden, film) = match (&self.film, modulate) {
            (Some(g), true) => {
                let (gamma, beta) = g.forward(h)?;
                (modulate_batch(&first.y, &gamma, &beta), Some((gamma, beta)))
            }
            _ => (first.y.clone(), None),
        };
        self.act.apply(&mut hidden.data);
        let second = self.second.forward(hidden.clone(), mode)?;
        let mut out = second.y.clone();
        out.add_assign(&first.x);
        Ok(BlockTrace { first, film, hidden, second, out })
    }

    /// Returns `(dz, dh)`; `dh` is zero when no modulation ran.
    pub fn backward(&mut self, trace: &BlockTrace<T>, h: &Matrix<T>, dout: &Batch<T>) -> (Batch<T>, Matrix<T>) {
        let mut dhidden = self.second.backward(&trace.second, dout.clone());
        self.act.backward(&trace.hidden.data, &mut dhidden.data);
        let mut dh = Matrix::zeros(h.rows, h.cols);
        let dfirst = match (&mut self.film, &trace.film) {
            (Some(g), Some((gamma, _))) => {
                let (dz, dgamma, dbeta) = modulate_batch_backward(&trace.first.y, gamma, &dhidden);
                dh = g.backward(h, &dgamma, &dbeta);
                dz
            }
            _ => dhidden,
        };
        let mut dz = self.first.backward(&trace.first, dfirst);
        dz.add_assign(dout);
        (dz, dh)
    }

    pub fn commit(&mut self, trace: &BlockTrace<T>) {
        self.first.commit(&trace.first);
        self.second.commit(&trace.second);
    }
}

impl<T: Scalar> Module<T> for ResidualBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.first.visit(&param_name(prefix, "first"), f);
        if let Some(g) = &self.film {
            g.visit(&param_name(prefix, "film"), f);
        }
        self.second.visit(&param_name(prefix, "second"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.first.visit_mut(&param_name(prefix, "first"), f);
        if let Some(g) = &mut self.film {
            g.visit_mut(&param_name(prefix, "film"), f);
        }
        self.second.visit_mut(&param_name(prefix, "second"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_rng;

    fn input(c: usize) -> Batch<f64> {
        let data = (0..c * 2 * 4 * 3).map(|i| ((i * 13 % 17) as f64 / 8.0) - 1.0).collect();
        Batch::from_vec(c, 2, 4, 3, data).unwrap()
    }

    #[test]
    fn zero_second_conv_gives_identity() {
        let mut rng = init_rng(0);
        let mut b = ResidualBlock::<f64>::new(4, Act::Relu, Some(FilmGenerator::identity(5, 4)), &mut rng);
        b.second.conv.weight.value.iter_mut().for_each(|v| *v = 0.0);
        b.second.conv.bias.value.iter_mut().for_each(|v| *v = 0.0);
        // With a zero conv the second BN sees a constant map and outputs its beta (0).
        let z = input(4);
        let h = Matrix::from_vec(2, 5, vec![0.3; 10]).unwrap();
        let t = b.forward(z.clone(), &h, true, Mode::Train).unwrap();
        assert_eq!(t.out, z);
    }

    #[test]
    fn text_gradient_flows_and_matches_finite_differences() {
        let mut rng = init_rng(1);
        let film = FilmGenerator::random(5, 4, 0.3, &mut rng);
        let mut b = ResidualBlock::<f64>::new(4, Act::Relu, Some(film), &mut rng);
        let z = input(4);
        let h = Matrix::from_vec(2, 5, (0..10).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let w: Vec<f64> = (0..z.data.len()).map(|i| (i as f64 * 0.31).cos()).collect();
        let loss = |b: &ResidualBlock<f64>, h: &Matrix<f64>| -> f64 {
            let t = b.forward(z.clone(), h, true, Mode::Train).unwrap();
            t.out.data.iter().zip(&w).map(|(a, c)| a * c).sum()
        };
        let t = b.forward(z.clone(), &h, true, Mode::Train).unwrap();
        let dout = Batch::from_vec(4, 2, 4, 3, w.clone()).unwrap();
        let (_, dh) = b.backward(&t, &h, &dout);
        assert!(dh.data.iter().any(|v| v.abs() > 1e-6));
        for k in 0..10 {
            let (mut hp, mut hm) = (h.clone(), h.clone());
            hp.data[k] += 1e-6;
            hm.data[k] -= 1e-6;
            let fd = (loss(&b, &hp) - loss(&b, &hm)) / 2e-6;
            assert!((fd - dh.data[k]).abs() < 1e-6 * fd.abs().max(1.0), "{k}: {fd} vs {}", dh.data[k]);
        }
    }
}

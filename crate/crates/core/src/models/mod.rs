//! Generator and discriminator networks.

mod block;
mod discriminator;
mod generator;
mod unit;

use serde::{Deserialize, Serialize};

pub use block::{BlockTrace, ResidualBlock};
pub use discriminator::{DiscTrace, Discriminator};
pub use generator::{min_max_normalize, GenTrace, Generator, RESIDUAL_BLOCKS};
pub use unit::{Act, ConvUnit, UnitTrace};

use crate::error::{Error, Result};

/// How the text embedding enters the networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Per-channel affine modulation inside the residual unit.
    Film,
    /// Project, tile over space and concatenate before the residual unit.
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilmInit {
    /// `W = 0`, `b_gamma = 1`, `b_beta = 0`.
    Identity,
    /// Identity biases, weights uniform in `±scale`.
    Random { scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Channels of the first encoder stage; later stages use 2×, 4×, 8×.
    pub base_width: usize,
    /// (height, width)
    pub resolution: (usize, usize),
    pub embed_dim: usize,
    pub conditioning: Conditioning,
    pub film_init: FilmInit,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_width: 64,
            resolution: (128, 64),
            embed_dim: 300,
            conditioning: Conditioning::Film,
            film_init: FilmInit::Identity,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.resolution;
        if self.base_width == 0 || self.embed_dim == 0 {
            return Err(Error::config("base width and embedding size must be positive"));
        }
        if h == 0 || w == 0 || h % 16 != 0 || w % 8 != 0 {
            return Err(Error::config(format!(
                "resolution {h}x{w} must have height divisible by 16 and width by 8"
            )));
        }
        Ok(())
    }

    /// Channels of the projected text map under concat conditioning.
    pub fn text_channels(&self) -> usize {
        2 * self.base_width
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::film::FilmGenerator;
    use crate::nn::{Mode, Module};
    use crate::tensor::{Batch, Matrix};
    use rand::{Rng, SeedableRng};

    fn small(conditioning: Conditioning, film_init: FilmInit) -> ModelConfig {
        ModelConfig {
            base_width: 4,
            resolution: (32, 16),
            embed_dim: 6,
            conditioning,
            film_init,
        }
    }

    fn inputs(n: usize, (h, w): (usize, usize), d: usize, seed: u64) -> (Batch<f64>, Matrix<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = (0..3 * n * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let e = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (Batch::from_vec(3, n, h, w, x).unwrap(), Matrix::from_vec(n, d, e).unwrap())
    }

    #[test]
    fn generator_preserves_shape_and_range() {
        let cfg = small(Conditioning::Film, FilmInit::Random { scale: 0.1 });
        let g = Generator::<f64>::new(&cfg, 0).unwrap();
        let (x, h) = inputs(2, cfg.resolution, 6, 1);
        let (y, _) = g.forward(&x, &h, Mode::Train).unwrap();
        assert!(y.same_dims(&x));
        assert!(y.data.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn bottleneck_is_eight_times_base_at_quarter_resolution() {
        let cfg = ModelConfig { base_width: 2, ..ModelConfig::default() };
        let g = Generator::<f32>::new(&cfg, 0).unwrap();
        let x = Batch::zeros(3, 1, 128, 64);
        let h = Matrix::zeros(1, 300);
        let (_, t) = g.forward(&x, &h, Mode::Eval).unwrap();
        for b in t.block_outputs() {
            assert_eq!((b.c, b.h, b.w), (16, 32, 16));
        }
    }

    #[test]
    fn identity_film_matches_ablated_twin_exactly() {
        let cfg = small(Conditioning::Film, FilmInit::Identity);
        let g = Generator::<f64>::new(&cfg, 3).unwrap();
        let twin = g.ablated();
        for seed in 0..3 {
            let (x, h) = inputs(2, cfg.resolution, 6, seed);
            let (a, _) = g.forward(&x, &h, Mode::Eval).unwrap();
            let (b, _) = twin.forward(&x, &h, Mode::Eval).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn shape_errors_are_reported() {
        let cfg = small(Conditioning::Film, FilmInit::Identity);
        let g = Generator::<f64>::new(&cfg, 0).unwrap();
        let (x, _) = inputs(1, (16, 16), 6, 0);
        assert!(matches!(g.forward(&x, &Matrix::zeros(1, 6), Mode::Eval), Err(Error::Shape(_))));
        let (x, _) = inputs(1, cfg.resolution, 6, 0);
        assert!(matches!(g.forward(&x, &Matrix::zeros(1, 5), Mode::Eval), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_input_names_the_stage() {
        let cfg = small(Conditioning::Film, FilmInit::Identity);
        let g = Generator::<f64>::new(&cfg, 0).unwrap();
        let (mut x, h) = inputs(1, cfg.resolution, 6, 0);
        x.data[5] = f64::NAN;
        match g.forward(&x, &h, Mode::Eval) {
            Err(Error::Numeric { stage, .. }) => assert!(stage.contains("E1"), "{stage}"),
            other => panic!("expected numeric error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn attention_maps_are_four_normalized_heatmaps() {
        let cfg = small(Conditioning::Film, FilmInit::Random { scale: 0.1 });
        let g = Generator::<f64>::new(&cfg, 0).unwrap();
        let (x, h) = inputs(2, cfg.resolution, 6, 2);
        let maps = g.attention_maps(&x, &h).unwrap();
        assert_eq!(maps.len(), 2);
        for m in maps.iter().flatten() {
            assert_eq!((m.c, m.h, m.w), (1, 8, 4));
            assert!(m.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(maps[0].len(), 4);
        assert_eq!(min_max_normalize(&[0.3f64; 6]), vec![0.0; 6]);
    }

    #[test]
    fn discriminator_scores_are_probabilities_and_resolution_is_enforced() {
        for cond in [Conditioning::Film, Conditioning::Concat] {
            let cfg = ModelConfig {
                base_width: 2,
                conditioning: cond,
                ..ModelConfig::default()
            };
            let d = Discriminator::<f32>::new(&cfg, 0).unwrap();
            let x = Batch::from_vec(3, 2, 128, 64, vec![0.25; 3 * 2 * 128 * 64]).unwrap();
            let (s, _) = d.forward(&x, &Matrix::zeros(2, 300), Mode::Train).unwrap();
            assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
            let sq = Batch::zeros(3, 1, 64, 64);
            assert!(matches!(d.forward(&sq, &Matrix::zeros(1, 300), Mode::Eval), Err(Error::Shape(_))));
        }
    }

    /// Central differences on a sample of entries of every parameter.
    fn check_params<M: Module<f64> + Clone>(
        net: &M,
        grads: &M,
        loss: impl Fn(&M) -> f64,
        per_tensor: usize,
        tol: f64,
    ) {
        let mut names = Vec::new();
        grads.visit("", &mut |n, p| {
            if p.kind == crate::nn::ParamKind::Trainable {
                names.push((n.to_string(), p.grad.clone()))
            }
        });
        let eps = 1e-6;
        for (name, grad) in names {
            let stride = (grad.len() / per_tensor).max(1);
            for i in (0..grad.len()).step_by(stride).take(per_tensor) {
                let bump = |delta: f64| {
                    let mut m = net.clone();
                    m.visit_mut("", &mut |n, p| {
                        if n == name {
                            p.value[i] += delta;
                        }
                    });
                    loss(&m)
                };
                let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
                let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-4);
                assert!(err < tol, "{name}[{i}]: fd {fd} analytic {}", grad[i]);
            }
        }
    }

    #[test]
    fn generator_gradients_match_finite_differences() {
        for cond in [Conditioning::Film, Conditioning::Concat] {
            let cfg = ModelConfig {
                base_width: 2,
                resolution: (16, 8),
                embed_dim: 5,
                conditioning: cond,
                film_init: FilmInit::Random { scale: 0.3 },
            };
            let g = Generator::<f64>::new(&cfg, 7).unwrap();
            let (x, h) = inputs(2, cfg.resolution, 5, 8);
            let w: Vec<f64> = (0..x.data.len()).map(|i| (i as f64 * 0.17).sin()).collect();
            let loss = |g: &Generator<f64>| {
                let (y, _) = g.forward(&x, &h, Mode::Train).unwrap();
                y.data.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
            };
            let mut gg = g.clone();
            let (_, t) = gg.forward(&x, &h, Mode::Train).unwrap();
            let dout = Batch::from_vec(3, 2, 16, 8, w.clone()).unwrap();
            let (dx, dh) = gg.backward(&t, &dout);
            check_params(&g, &gg, loss, 3, 1e-3);
            for k in [0, 3, 7] {
                let (mut hp, mut hm) = (h.clone(), h.clone());
                hp.data[k] += 1e-6;
                hm.data[k] -= 1e-6;
                let fd = {
                    let f = |h: &Matrix<f64>| {
                        let (y, _) = g.forward(&x, h, Mode::Train).unwrap();
                        y.data.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
                    };
                    (f(&hp) - f(&hm)) / 2e-6
                };
                assert!((fd - dh.data[k]).abs() <= 1e-3 * fd.abs().max(1e-4), "dh[{k}] {fd} vs {}", dh.data[k]);
            }
            assert!(dx.same_dims(&x));
        }
    }

    #[test]
    fn discriminator_gradients_match_finite_differences() {
        for cond in [Conditioning::Film, Conditioning::Concat] {
            let cfg = ModelConfig {
                base_width: 2,
                resolution: (16, 8),
                embed_dim: 5,
                conditioning: cond,
                film_init: FilmInit::Random { scale: 0.3 },
            };
            let d = Discriminator::<f64>::new(&cfg, 9).unwrap();
            let (x, h) = inputs(3, cfg.resolution, 5, 10);
            let loss = |d: &Discriminator<f64>, x: &Batch<f64>| {
                let (_, t) = d.forward(x, &h, Mode::Train).unwrap();
                t.logits[0] - 0.5 * t.logits[1] + 2.0 * t.logits[2]
            };
            let mut dd = d.clone();
            let (_, t) = dd.forward(&x, &h, Mode::Train).unwrap();
            let dx = dd.backward(&t, &[1.0, -0.5, 2.0]);
            check_params(&d, &dd, |m| loss(m, &x), 3, 1e-3);
            for k in [0, 100, 500] {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp.data[k] += 1e-6;
                xm.data[k] -= 1e-6;
                let fd = (loss(&d, &xp) - loss(&d, &xm)) / 2e-6;
                assert!((fd - dx.data[k]).abs() <= 1e-3 * fd.abs().max(1e-4), "dx[{k}]");
            }
        }
    }

    #[test]
    fn film_generators_are_independent_per_block() {
        let cfg = small(Conditioning::Film, FilmInit::Random { scale: 0.1 });
        let g = Generator::<f64>::new(&cfg, 0).unwrap();
        let films: Vec<&FilmGenerator<f64>> = g.blocks.iter().filter_map(|b| b.film.as_ref()).collect();
        assert_eq!(films.len(), 4);
        assert_ne!(films[0].w_gamma, films[1].w_gamma);
    }
}

//! Parallel vs sequential dispatch on the hot kernels.
//!
//! `exec::sequential` forces the row/sample fan-out onto the calling thread;
//! build with `--no-default-features` to also drop threaded GEMM.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use filmedgan::data::generate_synthetic;
use filmedgan::exec;
use filmedgan::film::FeatureMap;
use filmedgan::models::{Generator, ModelConfig};
use filmedgan::nn::{init_rng, Conv2d, Mode};
use filmedgan::tensor::{Batch, Matrix};

fn both<F: FnMut()>(c: &mut Criterion, group: &str, mut f: F) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function(BenchmarkId::from_parameter("parallel"), |b| b.iter(&mut f));
    g.bench_function(BenchmarkId::from_parameter("sequential"), |b| b.iter(|| exec::sequential(&mut f)));
    g.finish();
}

fn conv(c: &mut Criterion) {
    let mut rng = init_rng(0);
    let mut layer = Conv2d::<f32>::new(128, 128, 3, (1, 1), &mut rng);
    let x = Batch::from_vec(128, 32, 16, 8, (0..128 * 32 * 128).map(|i| (i % 13) as f32 * 0.1).collect()).unwrap();
    both(c, "conv3x3_128ch_fwd", || {
        std::hint::black_box(layer.forward(&x).unwrap());
    });
    let dy = x.clone();
    both(c, "conv3x3_128ch_bwd", || {
        std::hint::black_box(layer.backward(&x, &dy));
    });
}

fn generator(c: &mut Criterion) {
    let cfg = ModelConfig { base_width: 16, resolution: (64, 32), ..Default::default() };
    let mut g = Generator::<f32>::new(&cfg, 0).unwrap();
    let data = generate_synthetic(16, 0, (64, 32)).unwrap();
    let imgs: Vec<_> = data.all().map(|s| s.image.clone()).collect();
    let x = FeatureMap::stack(&imgs).unwrap();
    let h = Matrix::from_vec(x.n, 300, vec![0.05; x.n * 300]).unwrap();
    both(c, "generator_fwd_bwd_b16", || {
        let (y, t) = g.forward(&x, &h, Mode::Train).unwrap();
        std::hint::black_box(g.backward(&t, &y));
    });
}

fn synthetic(c: &mut Criterion) {
    both(c, "render_200_sprites", || {
        std::hint::black_box(generate_synthetic(200, 1, (64, 32)).unwrap());
    });
}

criterion_group!(benches, conv, generator, synthetic);
criterion_main!(benches);

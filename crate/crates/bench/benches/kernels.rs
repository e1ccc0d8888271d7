//! Hot kernels: MLP forward/backward, codebook beam rates, and the attacks.

use beamsec_core::attacks::{fgsm, ipgd, mi_fgsm, pgd};
use beamsec_core::beamcode::{beam_rates, build_dft_codebook, DftRates};
use beamsec_core::nn::{mlp_specs, MlpParams, Mode, Normalization};
use beamsec_core::rng::SplitMix64;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;

// Two base stations, 16 subcarriers, 512 beams: the preset shape.
const FEATURES: usize = 64;
const BEAMS: usize = 512;
const BATCH: usize = 100;

fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = SplitMix64::new(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.standard_normal())
}

fn model(norm: Normalization) -> MlpParams {
    let specs = mlp_specs(2, 128, norm, 0.1, BEAMS);
    MlpParams::init(FEATURES, &specs, 1).unwrap()
}

fn network(c: &mut Criterion) {
    let x = random(BATCH, FEATURES, 2);
    let y = random(BATCH, BEAMS, 3).mapv(f64::abs);
    for (name, norm) in [("bn", Normalization::BatchNorm), ("ln", Normalization::LayerNorm)] {
        let p = model(norm);
        c.bench_function(&format!("forward_eval_{name}"), |b| b.iter(|| p.predict(black_box(&x)).unwrap()));
        c.bench_function(&format!("forward_backward_{name}"), |b| {
            b.iter(|| {
                let (_, cache) = p.forward(black_box(&x), Mode::Train, 4).unwrap();
                p.backward(&cache, &y).unwrap()
            })
        });
    }
}

fn rates(c: &mut Criterion) {
    let (k, a) = (16, 32);
    let mut rng = SplitMix64::new(5);
    let slice: Vec<_> = (0..k * a).map(|_| rng.complex_normal(1.0)).collect();
    let codebook = build_dft_codebook(a, BEAMS).unwrap();
    let dft = DftRates::new(a, BEAMS).unwrap();
    c.bench_function("beam_rates_direct", |b| b.iter(|| beam_rates(black_box(&slice), &codebook, 1.0).unwrap()));
    c.bench_function("beam_rates_fft", |b| b.iter(|| dft.rates(black_box(&slice), 1.0).unwrap()));
}

fn attacks(c: &mut Criterion) {
    let p = model(Normalization::BatchNorm);
    let x = random(BATCH, FEATURES, 6);
    let y = random(BATCH, BEAMS, 7).mapv(f64::abs);
    let eps = 0.1;
    let mut g = c.benchmark_group("attacks");
    g.sample_size(20);
    g.bench_function("fgsm", |b| b.iter(|| fgsm(&p, black_box(&x), &y, eps).unwrap()));
    g.bench_function("mi_fgsm_10", |b| b.iter(|| mi_fgsm(&p, black_box(&x), &y, eps, eps / 10.0, 10, 1.0).unwrap()));
    g.bench_function("pgd_10", |b| b.iter(|| pgd(&p, black_box(&x), &y, eps, eps / 4.0, 10, true, 8).unwrap()));
    g.bench_function("ipgd_10x3", |b| b.iter(|| ipgd(&p, black_box(&x), &y, eps, eps / 4.0, 10, 3, true, 9).unwrap()));
    g.finish();
}

criterion_group!(benches, network, rates, attacks);
criterion_main!(benches);

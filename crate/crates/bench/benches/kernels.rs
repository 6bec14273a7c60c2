use criterion::{black_box, criterion_group, criterion_main, Criterion};
use fdp_core::besov::{sample_besov_density_seeded, BesovClass};
use fdp_core::mechanism::{NormOracle, SurrogateSampler};
use fdp_core::protocol::{FederatedConfig, Mechanism, Protocol};
use fdp_core::wavelet::{empirical_coefficients, Family, WaveletBasis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn norm_oracle(c: &mut Criterion) {
    let basis = Arc::new(WaveletBasis::haar());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for l in [2u32, 4, 6] {
        let oracle = NormOracle::new(basis.clone(), basis.index_set(l).unwrap()).unwrap();
        let u: Vec<f64> = (0..oracle.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        c.bench_function(&format!("osc_norm/haar/L={l}"), |b| b.iter(|| oracle.norm(black_box(&u)).unwrap()));
    }
}

fn surrogate_noise(c: &mut Criterion) {
    let basis = WaveletBasis::new(Family::Daubechies, 3, 0, 14).unwrap();
    let idx = basis.index_set(10).unwrap();
    let s = SurrogateSampler::new(&basis, &idx).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut acc = vec![0.0; idx.detail_len()];
    let mut buf = Vec::new();
    c.bench_function("surrogate_noise/d3/L=10", |b| {
        b.iter(|| s.add_noise(1.0, &mut rng, black_box(&mut acc), &mut buf).unwrap())
    });
}

fn coefficients(c: &mut Criterion) {
    let basis = WaveletBasis::new(Family::Daubechies, 3, 0, 16).unwrap();
    let idx = basis.index_set(10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..1024).map(|_| rng.gen()).collect();
    c.bench_function("empirical_coefficients/d3/n=1024/L=10", |b| {
        b.iter(|| empirical_coefficients(&basis, black_box(&x), &idx).unwrap())
    });
}

fn protocol_round(c: &mut Criterion) {
    let basis = Arc::new(WaveletBasis::new(Family::Daubechies, 3, 0, 16).unwrap());
    let class = BesovClass::new(1.5, 2.0, 2.0, 1.0).unwrap();
    let truth = sample_besov_density_seeded(&class, basis.clone(), 10, None, false, 4).unwrap();
    let cfg = FederatedConfig::new(16, 256, 1.0, 5, Mechanism::Laplace).unwrap();
    let protocol = Protocol::new(cfg, basis).unwrap();
    let mut round = 0;
    c.bench_function("round/laplace/m=16/n=256", |b| {
        b.iter(|| {
            round += 1;
            protocol.simulate_round(&truth, round).unwrap()
        })
    });
}

criterion_group!(benches, norm_oracle, surrogate_noise, coefficients, protocol_round);
criterion_main!(benches);

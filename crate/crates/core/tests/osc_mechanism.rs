use fdp_core::mechanism::{
    ExactDirectionSampler,
    laplace_noise, osc_norm, sample_osc_noise, sample_radius, sensitivity_delta, McmcConfig,
    NormOracle, OscMode, SurrogateSampler,
};
use fdp_core::rng::stream;
use fdp_core::stats::{ks_statistic, mean, stderr, variance};
use fdp_core::wavelet::{Family, MultiresCoefficients, WaveletBasis};
use proptest::prelude::*;
use std::sync::Arc;

fn haar_oracle(l: u32) -> NormOracle {
    let b = Arc::new(WaveletBasis::haar());
    let idx = b.index_set(l).unwrap();
    NormOracle::new(b, idx).unwrap()
}

#[test]
fn unit_haar_coefficient_has_norm_half() {
    let o = haar_oracle(0);
    assert!((o.norm(&[1.0]).unwrap() - 0.5).abs() < 1e-6);
    assert_eq!(o.norm(&[0.0]).unwrap(), 0.0);
}

#[test]
fn worst_neighbour_pair_at_one_sample_has_norm_one() {
    let b = Arc::new(WaveletBasis::haar());
    let idx = b.index_set(0).unwrap();
    let d = sensitivity_delta(&b, &idx, &[0.25], &[0.75]).unwrap();
    assert_eq!(d.get(0, 1), 2.0);
    let o = NormOracle::new(b.clone(), idx).unwrap();
    assert!((osc_norm(&o, &d).unwrap() - 1.0).abs() < 1e-9);
    let same = sensitivity_delta(&b, &idx, &[0.3, 0.6], &[0.3, 0.6]).unwrap();
    assert_eq!(same, MultiresCoefficients::zeros(idx));
}

#[test]
fn neighbours_at_fifty_samples_stay_within_one_fiftieth() {
    let b = Arc::new(WaveletBasis::new(Family::Daubechies, 2, 0, 12).unwrap());
    let idx = b.index_set(6).unwrap();
    let o = NormOracle::new(b.clone(), idx).unwrap();
    for r in 0..20u64 {
        let mut rng = stream(4, &[r]);
        let x: Vec<f64> = (0..50).map(|_| rand::Rng::gen(&mut rng)).collect();
        let mut xp = x.clone();
        xp[(r % 50) as usize] = rand::Rng::gen(&mut rng);
        let d = sensitivity_delta(&b, &idx, &x, &xp).unwrap();
        assert!(osc_norm(&o, &d).unwrap() <= 1.0 / 50.0 + 1e-6);
    }
}

#[test]
fn radius_moments_match_gamma() {
    let mut rng = stream(1, &[]);
    let draws: Vec<f64> = (0..1_000_000).map(|_| sample_radius(7, 100.0, &mut rng).unwrap()).collect();
    assert!((mean(&draws) - 0.08).abs() < 3.0 * stderr(&draws));
    let v = variance(&draws);
    let sq: Vec<f64> = draws.iter().map(|d| (d - 0.08).powi(2)).collect();
    assert!((v - 8.0 / 1e4).abs() < 3.0 * stderr(&sq));
    assert!(sample_radius(7, 0.0, &mut rng).is_err());
}

#[test]
fn exact_direction_on_a_line_is_uniform() {
    let o = haar_oracle(0);
    let mut rng = stream(2, &[]);
    let mut chain = ExactDirectionSampler::new(&o, McmcConfig { burn_in: 1000, thinning: 10 }).unwrap();
    let xs: Vec<f64> = (0..10_000).map(|_| chain.next(&mut rng).unwrap()[0]).collect();
    let ks = ks_statistic(&xs, |x| ((x + 2.0) / 4.0).clamp(0.0, 1.0));
    assert!(ks < 0.02, "KS {ks}");
}

#[test]
fn surrogate_body_contains_the_norm_ball_and_is_symmetric() {
    let b = WaveletBasis::haar();
    let idx = b.index_set(2).unwrap();
    let s = SurrogateSampler::new(&b, &idx).unwrap();
    let o = haar_oracle(2);
    let mut rng = stream(3, &[]);
    // Points of the norm ball from the exact sampler lie in the surrogate body.
    let mut chain = ExactDirectionSampler::new(&o, McmcConfig { burn_in: 1000, thinning: 10 }).unwrap();
    for _ in 0..200 {
        let u = chain.next(&mut rng).unwrap();
        assert!(s.contains(&u, 1e-9));
    }
    let draws: Vec<Vec<f64>> = (0..10_000).map(|_| s.sample_direction(&mut rng)).collect();
    for c in 0..idx.detail_len() {
        let col: Vec<f64> = draws.iter().map(|u| u[c]).collect();
        assert!(mean(&col).abs() < 4.0 * stderr(&col));
    }
    assert!(draws.iter().all(|u| s.contains(u, 1e-9)));
}

#[test]
fn surrogate_coordinates_dominate_exact_ones() {
    let b = Arc::new(WaveletBasis::haar());
    let idx = b.index_set(2).unwrap();
    let s = SurrogateSampler::new(&b, &idx).unwrap();
    let o = NormOracle::new(b.clone(), idx).unwrap();
    let mut rng = stream(5, &[]);
    let mut chain = ExactDirectionSampler::new(&o, McmcConfig { burn_in: 1000, thinning: 10 }).unwrap();
    let exact: Vec<f64> = (0..10_000).map(|_| chain.next(&mut rng).unwrap()[3].abs()).collect();
    let sur: Vec<f64> = (0..10_000).map(|_| s.sample_direction(&mut rng)[3].abs()).collect();
    let top = exact.iter().cloned().fold(0.0, f64::max);
    for i in 1..=20 {
        let t = top * i as f64 / 20.0;
        let pe = exact.iter().filter(|v| **v >= t).count() as f64 / 1e4;
        let ps = sur.iter().filter(|v| **v >= t).count() as f64 / 1e4;
        assert!(ps + 0.01 >= pe, "t {t}: surrogate {ps} exact {pe}");
    }
}

#[test]
fn noise_scales_inversely_with_theta() {
    let o = haar_oracle(2);
    let a: Vec<f64> = (0..20_000u64)
        .map(|r| sample_osc_noise(&o, 5.0, &mut stream(6, &[r]), OscMode::Surrogate).unwrap().values[0])
        .collect();
    let b: Vec<f64> = (0..20_000u64)
        .map(|r| sample_osc_noise(&o, 50.0, &mut stream(6, &[r]), OscMode::Surrogate).unwrap().values[0])
        .collect();
    for (x, y) in a.iter().zip(&b) {
        assert!((x / 10.0 - y).abs() < 1e-12);
    }
}

#[test]
fn laplace_noise_has_the_stated_law() {
    let mut rng = stream(7, &[]);
    let xs: Vec<f64> = (0..1_000_000).map(|_| laplace_noise(2, 4.0, 1.5, &mut rng).unwrap()).collect();
    let b = 1.5 * 2.0 / 4.0;
    assert!(mean(&xs).abs() < 3.0 * stderr(&xs));
    let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
    assert!((variance(&xs) - 2.0 * b * b).abs() < 3.0 * stderr(&sq));
    let unit: Vec<f64> = (0..10_000).map(|_| laplace_noise(0, 1.0, 1.0, &mut rng).unwrap()).collect();
    let ks = ks_statistic(&unit, |x| if x < 0.0 { 0.5 * x.exp() } else { 1.0 - 0.5 * (-x).exp() });
    assert!(ks < 0.0163, "KS {ks}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn norm_is_absolutely_homogeneous(u in prop::collection::vec(-1.0f64..1.0, 7), c in -5.0f64..5.0) {
        let o = haar_oracle(2);
        let cu: Vec<f64> = u.iter().map(|v| c * v).collect();
        let (a, b) = (o.norm(&cu).unwrap(), c.abs() * o.norm(&u).unwrap());
        prop_assert!((a - b).abs() <= 1e-6 * b.max(1.0));
    }

    #[test]
    fn norm_satisfies_the_triangle_inequality(
        u in prop::collection::vec(-1.0f64..1.0, 7),
        v in prop::collection::vec(-1.0f64..1.0, 7),
    ) {
        let o = haar_oracle(2);
        let s: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
        prop_assert!(o.norm(&s).unwrap() <= o.norm(&u).unwrap() + o.norm(&v).unwrap() + 1e-6);
    }
}

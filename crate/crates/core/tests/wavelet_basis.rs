use fdp_core::wavelet::{
    empirical_coefficients, exact_coefficients, read_coefficients_csv, write_coefficients_csv, Family,
    MultiresCoefficients, MultiresIndexSet, WaveletBasis,
};
use proptest::prelude::*;

#[test]
fn haar_values_by_hand() {
    let b = WaveletBasis::haar();
    assert_eq!(b.eval_psi(0, 1, 0.25).unwrap(), 1.0);
    assert_eq!(b.eval_psi(0, 1, 0.75).unwrap(), -1.0);
    // psi_{2,2} lives on [1/4, 1/2)
    assert_eq!(b.eval_psi(2, 2, 0.8).unwrap(), 0.0);
    assert_eq!(b.eval_psi(2, 2, 0.3).unwrap(), 2.0);
    assert_eq!(b.eval_phi(1, 0.9).unwrap(), 1.0);
    let coarse = WaveletBasis::new(Family::Haar, 1, 2, 14).unwrap();
    assert_eq!(coarse.eval_phi(1, 0.1).unwrap(), 2.0);
    assert!(b.eval_psi(0, 1, 1.5).is_err());
}

#[test]
fn unsupported_regularity_is_rejected() {
    assert!(WaveletBasis::new(Family::Daubechies, 9, 0, 14).is_err());
}

fn gram_error(b: &WaveletBasis, l_max: u32, grid: usize) -> f64 {
    let idx = b.index_set(l_max).unwrap();
    let rows: Vec<Vec<f64>> = (0..grid)
        .map(|i| {
            let t = (i as f64 + 0.5) / grid as f64;
            let mut v = Vec::new();
            for r in 1..=idx.approx_len() {
                v.push(b.eval_phi(r, t).unwrap());
            }
            for l in idx.levels() {
                for k in 1..=1usize << l {
                    v.push(b.eval_psi(l, k, t).unwrap());
                }
            }
            v
        })
        .collect();
    let d = idx.total_len();
    let mut worst = 0.0f64;
    for a in 0..d {
        for c in a..d {
            let ip: f64 = rows.iter().map(|r| r[a] * r[c]).sum::<f64>() / grid as f64;
            let target = if a == c { 1.0 } else { 0.0 };
            worst = worst.max((ip - target).abs());
        }
    }
    worst
}

#[test]
fn daubechies_two_gram_matrix_is_identity() {
    let b = WaveletBasis::new(Family::Daubechies, 2, 3, 14).unwrap();
    assert!(gram_error(&b, 5, 1 << 14) < 1e-6);
}

#[test]
fn daubechies_mothers_integrate_to_zero() {
    for a in 2..=4 {
        let b = WaveletBasis::new(Family::Daubechies, a, 0, 14).unwrap();
        let grid = 1usize << 14;
        for l in 0..=4u32 {
            for k in 1..=1usize << l {
                let s: f64 = (0..grid).map(|i| b.eval_psi(l, k, (i as f64 + 0.5) / grid as f64).unwrap()).sum();
                assert!((s / grid as f64).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn single_point_and_symmetric_pair() {
    let b = WaveletBasis::haar();
    let idx = b.index_set(3).unwrap();
    let one = empirical_coefficients(&b, &[0.25], &idx).unwrap();
    assert_eq!(one.get(0, 1), 1.0);
    let two = empirical_coefficients(&b, &[0.25, 0.75], &idx).unwrap();
    assert_eq!(two.get(0, 1), 0.0);
}

#[test]
fn planted_coefficient_is_recovered() {
    for (fam, a, tol) in [(Family::Haar, 1, 1e-8), (Family::Daubechies, 2, 1e-6)] {
        let b = WaveletBasis::new(fam, a, 0, 14).unwrap();
        let idx = b.index_set(5).unwrap();
        let f = |t: f64| 1.0 + 0.3 * b.eval_psi(2, 1, t).unwrap();
        let c = exact_coefficients(&b, f, &idx, 1 << 14).unwrap();
        assert!((c.approx()[0] - 1.0).abs() < tol);
        for l in idx.levels() {
            for k in 1..=1usize << l {
                let want = if (l, k) == (2, 1) { 0.3 } else { 0.0 };
                assert!((c.get(l, k) - want).abs() < tol, "{fam:?} ({l},{k}) = {}", c.get(l, k));
            }
        }
        for i in 0..50 {
            let t = (i as f64 + 0.5) / 50.0;
            assert!((b.reconstruct_point(&c, t).unwrap() - f(t)).abs() < 1e-6);
        }
    }
}

#[test]
fn plancherel_on_random_coefficients() {
    let b = WaveletBasis::new(Family::Daubechies, 3, 0, 14).unwrap();
    let idx = b.index_set(6).unwrap();
    let mut c = MultiresCoefficients::zeros(idx);
    c.approx_mut()[0] = 1.0;
    for (i, v) in c.detail_mut().iter_mut().enumerate() {
        *v = ((i * 37 % 11) as f64 - 5.0) / 40.0;
    }
    let grid = b.reconstruct_grid(&c, 1 << 14).unwrap();
    let l2: f64 = grid.iter().map(|v| v * v).sum::<f64>() / grid.len() as f64;
    assert!((l2 - c.sq_norm()).abs() < 1e-8 * c.sq_norm().max(1.0));
}

#[test]
fn enumeration_order_is_approx_then_levels() {
    let idx = MultiresIndexSet::new(1, 3).unwrap();
    assert_eq!(idx.approx_len(), 2);
    assert_eq!(idx.detail_len(), 2 + 4 + 8);
    assert_eq!(idx.detail_index(0), (1, 1));
    assert_eq!(idx.detail_index(2), (2, 1));
    assert_eq!(idx.detail_index(13), (3, 8));
    assert_eq!(idx.detail_position(3, 1), Some(6));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coefficient_csv_round_trips(values in prop::collection::vec(-10.0f64..10.0, 15)) {
        let idx = MultiresIndexSet::new(0, 3).unwrap();
        let c = MultiresCoefficients::from_parts(idx, vec![1.0], values).unwrap();
        let mut buf = Vec::new();
        write_coefficients_csv(&c, &mut buf).unwrap();
        let back = read_coefficients_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn empirical_coefficients_are_linear_in_the_sample(
        xs in prop::collection::vec(0.0f64..1.0, 1..20),
        ys in prop::collection::vec(0.0f64..1.0, 1..20),
    ) {
        let b = WaveletBasis::new(Family::Daubechies, 2, 0, 12).unwrap();
        let idx = b.index_set(4).unwrap();
        let cx = empirical_coefficients(&b, &xs, &idx).unwrap();
        let cy = empirical_coefficients(&b, &ys, &idx).unwrap();
        let mut both = xs.clone();
        both.extend(&ys);
        let cb = empirical_coefficients(&b, &both, &idx).unwrap();
        let (nx, ny) = (xs.len() as f64, ys.len() as f64);
        for p in 0..idx.detail_len() {
            let want = (nx * cx.detail()[p] + ny * cy.detail()[p]) / (nx + ny);
            prop_assert!((cb.detail()[p] - want).abs() < 1e-10);
        }
    }
}

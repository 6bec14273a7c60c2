//! Orthonormal scaling filters, normalised so that `sum(h) = sqrt(2)`.

use std::f64::consts::FRAC_1_SQRT_2;

const HAAR: [f64; 2] = [FRAC_1_SQRT_2, FRAC_1_SQRT_2];

/// Daubechies, two vanishing moments (4 taps).
const DB2: [f64; 4] = [
    0.482_962_913_144_534_1,
    0.836_516_303_737_807_9,
    0.224_143_868_042_013_4,
    -0.129_409_522_551_260_4,
];

/// Daubechies, three vanishing moments (6 taps).
const DB3: [f64; 6] = [
    0.332_670_552_950_082_6,
    0.806_891_509_311_092_5,
    0.459_877_502_118_491_4,
    -0.135_011_020_010_254_6,
    -0.085_441_273_882_026_66,
    0.035_226_291_885_709_54,
];

/// Daubechies, four vanishing moments (8 taps).
const DB4: [f64; 8] = [
    0.230_377_813_308_896_5,
    0.714_846_570_552_915_4,
    0.630_880_767_929_858_9,
    -0.027_983_769_416_859_85,
    -0.187_034_811_719_093_1,
    0.030_841_381_835_560_76,
    0.032_883_011_666_885_2,
    -0.010_597_401_785_069_03,
];

pub(crate) fn scaling_filter(vanishing_moments: usize) -> Option<&'static [f64]> {
    match vanishing_moments {
        1 => Some(&HAAR),
        2 => Some(&DB2),
        3 => Some(&DB3),
        4 => Some(&DB4),
        _ => None,
    }
}

/// Quadrature mirror of `h`: `g[i] = (-1)^i h[len-1-i]`.
pub(crate) fn wavelet_filter(h: &[f64]) -> Vec<f64> {
    let n = h.len();
    (0..n)
        .map(|i| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            s * h[n - 1 - i]
        })
        .collect()
}

/// One periodized synthesis step: `len(approx) = len(detail) = n` to `2n`.
pub(crate) fn synthesis_step(approx: &[f64], detail: &[f64], h: &[f64], g: &[f64]) -> Vec<f64> {
    let n = approx.len();
    let out_len = 2 * n;
    let mut out = vec![0.0; out_len];
    for k in 0..n {
        let (a, d) = (approx[k], detail[k]);
        if a == 0.0 && d == 0.0 {
            continue;
        }
        for (i, (&hi, &gi)) in h.iter().zip(g).enumerate() {
            out[(2 * k + i) % out_len] += a * hi + d * gi;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filters_are_orthonormal() {
        for a in 1..=4 {
            let h = scaling_filter(a).unwrap();
            let sum: f64 = h.iter().sum();
            assert!((sum - std::f64::consts::SQRT_2).abs() < 1e-12, "A={a}");
            for shift in 0..h.len() / 2 {
                let dot: f64 = (0..h.len() - 2 * shift).map(|i| h[i] * h[i + 2 * shift]).sum();
                let want = if shift == 0 { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12, "A={a} shift={shift} dot={dot}");
            }
        }
    }

    #[test]
    fn unsupported_regularity() {
        assert!(scaling_filter(0).is_none());
        assert!(scaling_filter(9).is_none());
    }
}

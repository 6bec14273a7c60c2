use super::{MultiresCoefficients, MultiresIndexSet, WaveletBasis};
use crate::error::{ensure, FdpError, Result};
use std::io::{BufRead, Write};

/// Sample averages `(1/n) sum_i psi_lk(x_i)` and `(1/n) sum_i phi_r(x_i)`.
pub fn empirical_coefficients(
    basis: &WaveletBasis,
    data: &[f64],
    index_set: &MultiresIndexSet,
) -> Result<MultiresCoefficients> {
    ensure!(!data.is_empty(), Argument, "empty data");
    ensure!(index_set.l0() == basis.l0(), Argument, "index set l0 differs from basis l0");
    ensure!(index_set.l_max() <= basis.max_level(), Argument, "index set exceeds basis levels");
    for &x in data {
        ensure!((0.0..=1.0).contains(&x), Domain, "data point {x} outside [0, 1]");
    }
    let mut out = MultiresCoefficients::zeros(*index_set);
    accumulate(basis, data.iter().map(|&x| (x, 1.0)), &mut out);
    let inv = 1.0 / data.len() as f64;
    out.approx_mut().iter_mut().for_each(|v| *v *= inv);
    out.detail_mut().iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

fn accumulate<I: Iterator<Item = (f64, f64)>>(basis: &WaveletBasis, points: I, out: &mut MultiresCoefficients) {
    let idx = *out.index_set();
    for (t, w) in points {
        basis.for_each_phi(t, |r, v| out.approx_mut()[r] += w * v);
        for level in idx.levels() {
            let row = out.level_mut(level);
            basis.for_each_psi(level, t, |k, v| row[k] += w * v);
        }
    }
}

/// Composite midpoint quadrature of `f_lk = int f psi_lk`. Requires at least
/// `2^{L+2}` points; `2^{L+4}` or the basis cell count is a sensible choice.
pub fn exact_coefficients<F: Fn(f64) -> f64>(
    basis: &WaveletBasis,
    density: F,
    index_set: &MultiresIndexSet,
    quadrature_points: usize,
) -> Result<MultiresCoefficients> {
    ensure!(
        quadrature_points >= 1usize << (index_set.l_max() + 2),
        Resolution,
        "{quadrature_points} quadrature points below 2^(L+2) for L = {}",
        index_set.l_max()
    );
    ensure!(index_set.l0() == basis.l0(), Argument, "index set l0 differs from basis l0");
    ensure!(index_set.l_max() <= basis.max_level(), Argument, "index set exceeds basis levels");
    let h = 1.0 / quadrature_points as f64;
    let mut values = Vec::with_capacity(quadrature_points);
    for i in 0..quadrature_points {
        let t = (i as f64 + 0.5) * h;
        let v = density(t);
        ensure!(v.is_finite() && v >= 0.0, Argument, "density is {v} at {t}");
        values.push((t, v * h));
    }
    let mut out = MultiresCoefficients::zeros(*index_set);
    accumulate(basis, values.into_iter(), &mut out);
    Ok(out)
}

/// Writes rows `kind,level,shift,value` where `kind` is `approx` or `detail`.
pub fn write_coefficients_csv<W: Write>(coeffs: &MultiresCoefficients, mut w: W) -> std::io::Result<()> {
    writeln!(w, "kind,level,shift,value")?;
    let idx = coeffs.index_set();
    for (r, v) in coeffs.approx().iter().enumerate() {
        writeln!(w, "approx,{},{},{}", idx.l0(), r + 1, v)?;
    }
    for (p, v) in coeffs.detail().iter().enumerate() {
        let (l, k) = idx.detail_index(p);
        writeln!(w, "detail,{l},{k},{v}")?;
    }
    Ok(())
}

/// Reads the format produced by [`write_coefficients_csv`]; extra trailing
/// columns are ignored.
pub fn read_coefficients_csv<R: BufRead>(r: R) -> Result<MultiresCoefficients> {
    let bad = |msg: String| FdpError::Argument(format!("coefficient csv: {msg}"));
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| bad(e.to_string()))?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 4 {
            return Err(bad(format!("line {} has {} fields", i + 1, f.len())));
        }
        let level: u32 = f[1].parse().map_err(|_| bad(format!("bad level on line {}", i + 1)))?;
        let shift: usize = f[2].parse().map_err(|_| bad(format!("bad shift on line {}", i + 1)))?;
        let value: f64 = f[3].parse().map_err(|_| bad(format!("bad value on line {}", i + 1)))?;
        rows.push((f[0] == "approx", level, shift, value));
    }
    let l0 = rows.iter().filter(|r| r.0).map(|r| r.1).next().ok_or_else(|| bad("no approx rows".into()))?;
    let l_max = rows.iter().filter(|r| !r.0).map(|r| r.1).max().unwrap_or(l0);
    let idx = MultiresIndexSet::new(l0, l_max)?;
    let mut out = MultiresCoefficients::zeros(idx);
    for (is_approx, level, shift, value) in rows {
        if is_approx {
            ensure!(shift >= 1 && shift <= idx.approx_len(), Argument, "approx shift {shift} out of range");
            out.approx_mut()[shift - 1] = value;
        } else {
            out.set(level, shift, value)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::Family;

    #[test]
    fn single_point_and_symmetry() {
        let b = WaveletBasis::haar();
        let idx = b.index_set(3).unwrap();
        let c = empirical_coefficients(&b, &[0.25], &idx).unwrap();
        assert_eq!(c.get(0, 1), 1.0);
        let c = empirical_coefficients(&b, &[0.25, 0.75], &idx).unwrap();
        assert_eq!(c.get(0, 1), 0.0);
        assert!(empirical_coefficients(&b, &[], &idx).is_err());
        assert!(matches!(empirical_coefficients(&b, &[1.2], &idx), Err(FdpError::Domain(_))));
    }

    #[test]
    fn uniform_sample_has_small_details() {
        use rand::{Rng, SeedableRng};
        let b = WaveletBasis::haar();
        let idx = b.index_set(6).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..100_000).map(|_| rng.gen()).collect();
        let c = empirical_coefficients(&b, &data, &idx).unwrap();
        let tol = 4.0 / (data.len() as f64).sqrt();
        assert!(c.detail().iter().all(|v| v.abs() <= tol));
    }

    #[test]
    fn exact_coefficients_recover_single_bump() {
        for (fam, a, depth) in [(Family::Haar, 1, 14), (Family::Daubechies, 2, 12)] {
            let b = WaveletBasis::new(fam, a, 0, depth).unwrap();
            let idx = b.index_set(5).unwrap();
            let f = |t: f64| 1.0 + 0.3 * b.eval_psi(2, 1, t).unwrap();
            let q = b.resolution_cells(5).max(1 << 9);
            let c = exact_coefficients(&b, f, &idx, q).unwrap();
            let tol = if fam == Family::Haar { 1e-8 } else { 1e-6 };
            assert!((c.approx()[0] - 1.0).abs() < tol);
            for p in 0..idx.detail_len() {
                let (l, k) = idx.detail_index(p);
                let want = if (l, k) == (2, 1) { 0.3 } else { 0.0 };
                assert!((c.detail()[p] - want).abs() < tol, "{fam} ({l},{k}) = {}", c.detail()[p]);
            }
            // round trip through reconstruction
            let c2 = exact_coefficients(&b, |t| b.reconstruct_point(&c, t).unwrap(), &idx, q).unwrap();
            for (x, y) in c.detail().iter().zip(c2.detail()) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn uniform_reconstructs_to_one() {
        let b = WaveletBasis::haar();
        let idx = b.index_set(4).unwrap();
        let c = exact_coefficients(&b, |_| 1.0, &idx, 1 << 8).unwrap();
        assert!(c.detail().iter().all(|v| v.abs() < 1e-10));
        for t in [0.0, 0.2, 0.5, 0.91, 1.0] {
            assert!((b.reconstruct_point(&c, t).unwrap() - 1.0).abs() < 1e-8);
        }
        assert!(matches!(
            exact_coefficients(&b, |_| 1.0, &idx, 32),
            Err(FdpError::Resolution(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let idx = MultiresIndexSet::new(1, 3).unwrap();
        let mut c = MultiresCoefficients::zeros(idx);
        c.approx_mut()[1] = 0.5;
        c.set(3, 7, -0.125).unwrap();
        c.set(1, 2, 1.0 / 3.0).unwrap();
        let mut buf = Vec::new();
        write_coefficients_csv(&c, &mut buf).unwrap();
        let back = read_coefficients_csv(&buf[..]).unwrap();
        assert_eq!(back, c);
    }
}

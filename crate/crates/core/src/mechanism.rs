//! The multiscale-oscillation norm and its exponential mechanism.
//!
//! `||u|| = sup { sum u_lk g_lk : osc(sum g_lk psi_lk) <= 1 }` is evaluated on
//! a grid of `M` cell midpoints through its dual form
//! `||u|| = (1/2) min { ||w||_1 : Psi^T w = u, 1^T w = 0 }`, where identical
//! grid rows of `Psi` are merged first.
//!
//! Noise with density proportional to `exp(-theta ||v||)` is drawn as `D U`
//! with `D ~ Gamma(s + 1, 1/theta)` and `U` uniform on the unit ball. `U` comes
//! either from a hit-and-run chain on the ball or from a weighted
//! cross-polytope that contains the ball.

use crate::error::{ensure, FdpError, Result};
use crate::lp::L1Problem;
use crate::wavelet::{empirical_coefficients, MultiresCoefficients, MultiresIndexSet, WaveletBasis};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;

pub const DEFAULT_GRID: usize = 4096;

#[derive(Debug, Clone)]
pub struct NormOracle {
    basis: Arc<WaveletBasis>,
    index_set: MultiresIndexSet,
    grid_size: usize,
    problem: L1Problem,
}

impl NormOracle {
    /// Grid of `max(4096, cells)` midpoints, where `cells` is the resolution on
    /// which the basis is piecewise constant.
    pub fn new(basis: Arc<WaveletBasis>, index_set: MultiresIndexSet) -> Result<Self> {
        let m = DEFAULT_GRID.max(basis.resolution_cells(index_set.l_max()));
        Self::with_grid(basis, index_set, m)
    }

    pub fn with_grid(basis: Arc<WaveletBasis>, index_set: MultiresIndexSet, grid_size: usize) -> Result<Self> {
        ensure!(index_set.l0() == basis.l0(), Config, "index set l0 differs from basis l0");
        ensure!(index_set.l_max() <= basis.max_level(), Config, "index set exceeds basis levels");
        ensure!(grid_size >= 2, Config, "grid needs at least 2 points");
        let s = index_set.detail_len();
        let r = s + 1;
        let mut seen: HashMap<Vec<u64>, ()> = HashMap::new();
        let mut cols = Vec::new();
        let mut row = vec![0.0; r];
        for i in 0..grid_size {
            let t = (i as f64 + 0.5) / grid_size as f64;
            row.iter_mut().for_each(|v| *v = 0.0);
            for level in index_set.levels() {
                let off = index_set.level_offset(level);
                basis.for_each_psi(level, t, |k, v| row[off + k] = v);
            }
            row[s] = 1.0;
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            if seen.insert(key, ()).is_none() {
                cols.extend_from_slice(&row);
            }
        }
        ensure!(
            cols.len() / r >= r,
            Config,
            "grid of {grid_size} points has {} distinct rows, fewer than {r} unknowns",
            cols.len() / r
        );
        Ok(NormOracle { basis, index_set, grid_size, problem: L1Problem::new(r, cols) })
    }

    pub fn basis(&self) -> &Arc<WaveletBasis> {
        &self.basis
    }
    pub fn index_set(&self) -> &MultiresIndexSet {
        &self.index_set
    }
    pub fn grid_size(&self) -> usize {
        self.grid_size
    }
    pub fn dim(&self) -> usize {
        self.index_set.detail_len()
    }
    /// Number of distinct grid rows kept in the LP.
    pub fn distinct_rows(&self) -> usize {
        self.problem.num_cols()
    }

    /// Norm of a detail vector.
    pub fn norm(&self, u: &[f64]) -> Result<f64> {
        Ok(self.norm_with_witness(u)?.0)
    }

    /// Norm together with a maximising `g` (`osc(sum g psi) <= 1`,
    /// `u . g = ||u||`), which is also a subgradient of the norm at `u`.
    pub fn norm_with_witness(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        ensure!(u.len() == self.dim(), Argument, "vector length {} != {}", u.len(), self.dim());
        ensure!(u.iter().all(|v| v.is_finite()), Argument, "non-finite vector");
        let mut b = u.to_vec();
        b.push(0.0);
        let sol = self.problem.solve(&b)?;
        let s = self.dim();
        let g: Vec<f64> = sol.dual[..s].iter().map(|v| 0.5 * v).collect();
        Ok((0.5 * sol.value, g))
    }
}

/// `osc_norm(oracle, u)` on the detail block of `u`.
pub fn osc_norm(oracle: &NormOracle, u: &MultiresCoefficients) -> Result<f64> {
    ensure!(u.index_set() == oracle.index_set(), Argument, "index set mismatch");
    oracle.norm(u.detail())
}

/// `empirical_coefficients(x) - empirical_coefficients(x')` for datasets that
/// differ in at most one entry.
pub fn sensitivity_delta(
    basis: &WaveletBasis,
    index_set: &MultiresIndexSet,
    x: &[f64],
    x_prime: &[f64],
) -> Result<MultiresCoefficients> {
    ensure!(x.len() == x_prime.len(), Argument, "datasets have different sizes");
    let diff = x.iter().zip(x_prime).filter(|(a, b)| a != b).count();
    ensure!(diff <= 1, Argument, "datasets differ in {diff} entries");
    let a = empirical_coefficients(basis, x, index_set)?;
    let b = empirical_coefficients(basis, x_prime, index_set)?;
    a.sub(&b)
}

/// `D ~ Gamma(s + 1, 1/theta)`.
pub fn sample_radius<R: Rng + ?Sized>(s: usize, theta: f64, rng: &mut R) -> Result<f64> {
    ensure!(theta > 0.0 && theta.is_finite(), Argument, "theta must be positive, got {theta}");
    let g = Gamma::new(s as f64 + 1.0, 1.0 / theta).map_err(|e| FdpError::Internal(e.to_string()))?;
    Ok(g.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub burn_in: usize,
    pub thinning: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig { burn_in: 5000, thinning: 20 }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.burn_in >= 1000, Config, "burn-in must be >= 1000");
        ensure!(self.thinning >= 10, Config, "thinning must be >= 10");
        Ok(())
    }
}

/// Hit-and-run on the unit ball of the norm.
#[derive(Debug, Clone)]
pub struct HitAndRun<'a> {
    oracle: &'a NormOracle,
    state: Vec<f64>,
}

impl<'a> HitAndRun<'a> {
    pub fn new(oracle: &'a NormOracle) -> Self {
        HitAndRun { oracle, state: vec![0.0; oracle.dim()] }
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    /// Largest `t >= 0` with `||u + t d|| <= 1`, given `||d|| = nd`.
    fn chord_end(&self, d: &[f64], nd: f64, nu: f64) -> Result<f64> {
        let u = &self.state;
        let point = |t: f64| -> Vec<f64> { u.iter().zip(d).map(|(a, b)| a + t * b).collect() };
        let mut t_hi = (1.0 + nu) / nd;
        for _ in 0..200 {
            let (v, g) = self.oracle.norm_with_witness(&point(t_hi))?;
            if v <= 1.0 + 1e-10 {
                return Ok(t_hi);
            }
            let ug: f64 = u.iter().zip(&g).map(|(a, b)| a * b).sum();
            let dg: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if dg <= 0.0 {
                break;
            }
            let next = (1.0 - ug) / dg;
            if !(next < t_hi) || next < 0.0 {
                break;
            }
            t_hi = next;
        }
        // Bisection fallback on [0, t_hi].
        let (mut lo, mut hi) = (0.0, (1.0 + nu) / nd);
        ensure!(
            self.oracle.norm(&point(hi))? >= 1.0,
            Internal,
            "chord search failed to bracket the boundary"
        );
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.oracle.norm(&point(mid))? <= 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let dim = self.state.len();
        let mut d: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let len = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        d.iter_mut().for_each(|v| *v /= len);
        let nd = self.oracle.norm(&d)?;
        let nu = self.oracle.norm(&self.state)?;
        let t_plus = self.chord_end(&d, nd, nu)?;
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        let t_minus = self.chord_end(&neg, nd, nu)?;
        let t = -t_minus + rng.gen::<f64>() * (t_plus + t_minus);
        for (s, di) in self.state.iter_mut().zip(&d) {
            *s += t * di;
        }
        Ok(())
    }

    pub fn run<R: Rng + ?Sized>(&mut self, steps: usize, rng: &mut R) -> Result<()> {
        for _ in 0..steps {
            self.step(rng)?;
        }
        Ok(())
    }
}

/// Stream of approximately uniform points of the unit ball: one burn-in,
/// then `thinning` steps between consecutive draws.
#[derive(Debug, Clone)]
pub struct ExactDirectionSampler<'a> {
    chain: HitAndRun<'a>,
    mcmc: McmcConfig,
    burned: bool,
}

impl<'a> ExactDirectionSampler<'a> {
    pub fn new(oracle: &'a NormOracle, mcmc: McmcConfig) -> Result<Self> {
        mcmc.validate()?;
        Ok(ExactDirectionSampler { chain: HitAndRun::new(oracle), mcmc, burned: false })
    }

    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<f64>> {
        if !self.burned {
            self.chain.run(self.mcmc.burn_in, rng)?;
            self.burned = true;
        }
        self.chain.run(self.mcmc.thinning, rng)?;
        Ok(self.chain.state().to_vec())
    }
}

/// One point from a fresh chain after `burn_in + thinning` steps.
pub fn sample_direction_exact<R: Rng + ?Sized>(oracle: &NormOracle, rng: &mut R, mcmc: McmcConfig) -> Result<Vec<f64>> {
    ExactDirectionSampler::new(oracle, mcmc)?.next(rng)
}

/// Uniform sampler on `{u : sum |u_lk| / c_l <= 1}` with
/// `c_l = 2 Lambda 2^{l/2}` and `Lambda = max_t sum |psi_lk(t)| 2^{-l/2}`.
/// Every `u` of norm at most one lies in this body.
#[derive(Debug, Clone)]
pub struct SurrogateSampler {
    index_set: MultiresIndexSet,
    lambda: f64,
    weights: Vec<f64>,
}

impl SurrogateSampler {
    pub fn new(basis: &WaveletBasis, index_set: &MultiresIndexSet) -> Result<Self> {
        ensure!(index_set.l0() == basis.l0(), Config, "index set l0 differs from basis l0");
        ensure!(index_set.l_max() <= basis.max_level(), Config, "index set exceeds basis levels");
        let lambda = basis.overlap_weight(index_set.l0(), index_set.l_max());
        let mut weights = Vec::with_capacity(index_set.detail_len());
        for l in index_set.levels() {
            let c = 2.0 * lambda * 2f64.powf(l as f64 / 2.0);
            weights.extend(std::iter::repeat(c).take(1usize << l));
        }
        Ok(SurrogateSampler { index_set: *index_set, lambda, weights })
    }

    pub fn index_set(&self) -> &MultiresIndexSet {
        &self.index_set
    }
    /// Overlap constant `Lambda`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    /// Per-coordinate half-widths `c_l`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    /// Whether `u` lies in the body (with relative slack `tol`).
    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        u.iter().zip(&self.weights).map(|(v, c)| v.abs() / c).sum::<f64>() <= 1.0 + tol
    }

    pub fn sample_direction<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.weights.len()];
        self.fill_scaled(1.0, rng, &mut out);
        out
    }

    /// Writes `scale * U` into `out`, `U` uniform on the body.
    fn fill_scaled<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R, out: &mut [f64]) {
        let mut total: f64 = rng.sample(Exp1);
        for (o, c) in out.iter_mut().zip(&self.weights) {
            let e: f64 = rng.sample(Exp1);
            total += e;
            *o = if rng.gen::<bool>() { c * e } else { -c * e };
        }
        let f = scale / total;
        out.iter_mut().for_each(|v| *v *= f);
    }

    /// Adds one draw of `D U` (with `D ~ Gamma(s + 1, 1/theta)`) to `acc` and
    /// returns `D`.
    pub fn add_noise<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R, acc: &mut [f64], buf: &mut Vec<f64>) -> Result<f64> {
        let d = sample_radius(self.weights.len(), theta, rng)?;
        buf.resize(self.weights.len(), 0.0);
        self.fill_scaled(d, rng, buf);
        for (a, b) in acc.iter_mut().zip(buf.iter()) {
            *a += b;
        }
        Ok(d)
    }
}

/// One uniform draw from the dominating body.
pub fn sample_direction_surrogate<R: Rng + ?Sized>(
    basis: &WaveletBasis,
    index_set: &MultiresIndexSet,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(SurrogateSampler::new(basis, index_set)?.sample_direction(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    ExactMcmc,
    Surrogate,
    Laplace,
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseKind::ExactMcmc => "exact-mcmc",
            NoiseKind::Surrogate => "surrogate",
            NoiseKind::Laplace => "laplace",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDraw {
    pub values: Vec<f64>,
    /// `D`; zero for Laplace draws.
    pub radius: f64,
    pub kind: NoiseKind,
    pub theta: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OscMode {
    Exact(McmcConfig),
    Surrogate,
}

/// `D U` with `D ~ Gamma(s + 1, 1/theta)` and `U` from the chosen sampler.
pub fn sample_osc_noise<R: Rng + ?Sized>(oracle: &NormOracle, theta: f64, rng: &mut R, mode: OscMode) -> Result<NoiseDraw> {
    let s = oracle.dim();
    let radius = sample_radius(s, theta, rng)?;
    let (u, kind) = match mode {
        OscMode::Exact(mcmc) => (sample_direction_exact(oracle, rng, mcmc)?, NoiseKind::ExactMcmc),
        OscMode::Surrogate => (
            sample_direction_surrogate(oracle.basis(), oracle.index_set(), rng)?,
            NoiseKind::Surrogate,
        ),
    };
    Ok(NoiseDraw { values: u.into_iter().map(|v| radius * v).collect(), radius, kind, theta, seed: None })
}

/// Laplace draw with scale `c_sens 2^{l/2} / theta`.
pub fn laplace_noise<R: Rng + ?Sized>(level: u32, theta: f64, c_sens: f64, rng: &mut R) -> Result<f64> {
    ensure!(theta > 0.0 && theta.is_finite(), Argument, "theta must be positive, got {theta}");
    Ok(laplace(c_sens * 2f64.powf(level as f64 / 2.0) / theta, rng))
}

pub(crate) fn laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let e: f64 = rng.sample(Exp1);
    if rng.gen::<bool>() {
        scale * e
    } else {
        -scale * e
    }
}

/// Laplace noise over a whole index set as a [`NoiseDraw`].
pub fn laplace_noise_vector<R: Rng + ?Sized>(index_set: &MultiresIndexSet, theta: f64, c_sens: f64, rng: &mut R) -> Result<NoiseDraw> {
    ensure!(theta > 0.0 && theta.is_finite(), Argument, "theta must be positive, got {theta}");
    let mut values = Vec::with_capacity(index_set.detail_len());
    for l in index_set.levels() {
        let scale = c_sens * 2f64.powf(l as f64 / 2.0) / theta;
        for _ in 0..1usize << l {
            values.push(laplace(scale, rng));
        }
    }
    Ok(NoiseDraw { values, radius: 0.0, kind: NoiseKind::Laplace, theta, seed: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use crate::wavelet::Family;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn haar_oracle(l: u32) -> NormOracle {
        let b = Arc::new(WaveletBasis::haar());
        let idx = b.index_set(l).unwrap();
        NormOracle::new(b, idx).unwrap()
    }

    #[test]
    fn single_haar_coefficient() {
        let o = haar_oracle(0);
        assert_eq!(o.distinct_rows(), 2);
        assert!((o.norm(&[1.0]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(o.norm(&[0.0]).unwrap(), 0.0);
        assert!((o.norm(&[-3.0]).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_delta() {
        let b = WaveletBasis::haar();
        let idx = b.index_set(0).unwrap();
        let d = sensitivity_delta(&b, &idx, &[0.25], &[0.75]).unwrap();
        assert_eq!(d.get(0, 1), 2.0);
        let o = haar_oracle(0);
        assert!((osc_norm(&o, &d).unwrap() - 1.0).abs() < 1e-12);
        let d = sensitivity_delta(&b, &idx, &[0.3, 0.1], &[0.3, 0.1]).unwrap();
        assert_eq!(d.sq_norm(), 0.0);
        assert!(sensitivity_delta(&b, &idx, &[0.3, 0.1], &[0.4, 0.2]).is_err());
    }

    #[test]
    fn daubechies_sensitivity_bound() {
        let b = Arc::new(WaveletBasis::new(Family::Daubechies, 2, 0, 12).unwrap());
        let idx = b.index_set(3).unwrap();
        let o = NormOracle::new(b.clone(), idx).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10;
        let mut best: f64 = 0.0;
        for _ in 0..30 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let mut y = x.clone();
            y[rng.gen_range(0..n)] = rng.gen();
            let d = sensitivity_delta(&b, &idx, &x, &y).unwrap();
            let v = osc_norm(&o, &d).unwrap();
            assert!(v <= 1.0 / n as f64 + 1e-9, "{v}");
            best = best.max(v);
        }
        assert!(best >= 0.5 / n as f64);
    }

    #[test]
    fn witness_is_feasible_and_tight() {
        let o = haar_oracle(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = WaveletBasis::haar();
        for _ in 0..20 {
            let u: Vec<f64> = (0..o.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (v, g) = o.norm_with_witness(&u).unwrap();
            let ug: f64 = u.iter().zip(&g).map(|(a, b)| a * b).sum();
            assert!((ug - v).abs() < 1e-9);
            let idx = *o.index_set();
            let coeffs = MultiresCoefficients::from_parts(idx, vec![0.0], g).unwrap();
            let grid = b.reconstruct_grid(&coeffs, 1 << 8).unwrap();
            let (lo, hi) = grid.iter().fold((f64::MAX, f64::MIN), |(a, c), &x| (a.min(x), c.max(x)));
            assert!(hi - lo <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn radius_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..200_000).map(|_| sample_radius(7, 100.0, &mut rng).unwrap()).collect();
        let m = stats::mean(&xs);
        assert!((m - 0.08).abs() < 3.0 * stats::stderr(&xs));
        assert!(sample_radius(7, 0.0, &mut rng).is_err());
        let v = stats::variance(&xs);
        assert!((v - 8.0 / 1e4).abs() < 0.02 * 8.0 / 1e4);
    }

    #[test]
    fn surrogate_body_contains_the_ball() {
        // Every point on the norm sphere lies in the body.
        let o = haar_oracle(2);
        let b = WaveletBasis::haar();
        let s = SurrogateSampler::new(&b, o.index_set()).unwrap();
        assert_eq!(s.lambda(), 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let u: Vec<f64> = (0..o.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let n = o.norm(&u).unwrap();
            let p: Vec<f64> = u.iter().map(|v| v / n).collect();
            assert!(s.contains(&p, 1e-9));
        }
        for _ in 0..1000 {
            assert!(s.contains(&s.sample_direction(&mut rng), 1e-12));
        }
    }

    #[test]
    fn one_dimensional_chain_is_uniform() {
        let o = haar_oracle(0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut sampler = ExactDirectionSampler::new(&o, McmcConfig::default()).unwrap();
        let xs: Vec<f64> = (0..2000).map(|_| sampler.next(&mut rng).unwrap()[0]).collect();
        let ks = stats::ks_statistic(&xs, |x| ((x + 2.0) / 4.0).clamp(0.0, 1.0));
        assert!(ks < 0.04, "{ks}");
    }

    #[test]
    fn chain_stays_in_ball() {
        let o = haar_oracle(2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut chain = HitAndRun::new(&o);
        for _ in 0..300 {
            chain.step(&mut rng).unwrap();
            assert!(o.norm(chain.state()).unwrap() <= 1.0 + 1e-3);
        }
    }

    #[test]
    fn laplace_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..200_000).map(|_| laplace_noise(2, 4.0, 1.5, &mut rng).unwrap()).collect();
        let b = 1.5 * 2.0 / 4.0;
        assert!(stats::mean(&xs).abs() < 3.0 * stats::stderr(&xs));
        assert!((stats::variance(&xs) - 2.0 * b * b).abs() < 0.03 * 2.0 * b * b);
        assert!(laplace_noise(0, -1.0, 1.0, &mut rng).is_err());
    }
}

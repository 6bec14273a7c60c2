//! Besov balls in wavelet-sequence form and random densities inside them.

use crate::error::{ensure, FdpError, Result};
use crate::wavelet::{MultiresCoefficients, MultiresIndexSet, WaveletBasis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BesovClass {
    pub alpha: f64,
    pub p: f64,
    pub q: f64,
    pub radius: f64,
}

impl BesovClass {
    pub fn new(alpha: f64, p: f64, q: f64, radius: f64) -> Result<Self> {
        let c = BesovClass { alpha, p, q, radius };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.alpha > 0.0 && self.alpha.is_finite(), Config, "alpha must be positive, got {}", self.alpha);
        ensure!(self.p >= 2.0, Config, "p must be in [2, inf], got {}", self.p);
        ensure!(self.q >= 1.0, Config, "q must be in [1, inf], got {}", self.q);
        ensure!(self.radius > 0.0 && self.radius.is_finite(), Config, "radius must be positive");
        Ok(())
    }

    /// `nu = alpha - 1/p` (`alpha` when `p` is infinite).
    pub fn nu(&self) -> f64 {
        self.alpha - 1.0 / self.p
    }

    /// Checks `alpha < A` for the given basis.
    pub fn check_basis(&self, basis: &WaveletBasis) -> Result<()> {
        ensure!(
            self.alpha < basis.regularity() as f64 || basis.regularity() == 1 && self.alpha <= 1.0,
            Config,
            "alpha = {} not below the basis regularity {}",
            self.alpha,
            basis.regularity()
        );
        Ok(())
    }
}

fn lp_norm(v: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    } else {
        v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// l_q over detail levels of `2^{l(alpha + 1/2 - 1/p)} ||(f_lk)_k||_p`.
pub fn besov_seq_norm(coeffs: &MultiresCoefficients, class: &BesovClass) -> Result<f64> {
    class.validate()?;
    ensure!(coeffs.detail().iter().all(|v| v.is_finite()), Argument, "non-finite coefficients");
    let idx = coeffs.index_set();
    let per_level: Vec<f64> = idx
        .levels()
        .map(|l| 2f64.powf(l as f64 * (class.alpha + 0.5 - 1.0 / class.p)) * lp_norm(coeffs.level(l), class.p))
        .collect();
    Ok(lp_norm(&per_level, class.q))
}

/// `h(x) = 2 beta(2x) - beta(x)` with `beta(x) = exp(-1/(1 - 4x^2))` on
/// `|x| < 1/2`. Smooth, supported in `(-1/2, 1/2)`, `int h = 0`,
/// `h(0) = e^{-1}`.
pub fn bump(x: f64) -> f64 {
    let beta = |y: f64| {
        let s = 1.0 - 4.0 * y * y;
        if s > 0.0 {
            (-1.0 / s).exp()
        } else {
            0.0
        }
    };
    2.0 * beta(2.0 * x) - beta(x)
}

/// `sup |h|` (attained at the origin).
pub const BUMP_SUP: f64 = 0.367_879_441_171_442_33;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub a: f64,
    pub b: f64,
    pub t0: f64,
}

impl Bump {
    fn eval(&self, x: f64) -> f64 {
        self.a * bump(self.b * (self.t0 - x))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityMetadata {
    pub class: Option<BesovClass>,
    pub seed: Option<u64>,
    pub c_r: f64,
    pub generation_level: u32,
    pub single_level: bool,
    pub bumps: Vec<Bump>,
}

/// `f = 1 + sum u_lk psi_lk (+ bumps)`, with cell tables for exact sampling.
#[derive(Debug, Clone)]
pub struct DensityModel {
    basis: Arc<WaveletBasis>,
    coeffs: MultiresCoefficients,
    bumps: Vec<Bump>,
    meta: DensityMetadata,
    cell_cdf: Vec<f64>,
    min_value: f64,
}

impl DensityModel {
    /// Builds a density from coefficients; approximation entries are
    /// overwritten by those of the constant 1.
    pub fn from_coefficients(basis: Arc<WaveletBasis>, mut coeffs: MultiresCoefficients) -> Result<Self> {
        ensure!(coeffs.index_set().l0() == basis.l0(), Argument, "l0 mismatch");
        ensure!(coeffs.index_set().l_max() <= basis.max_level(), Argument, "level beyond basis");
        let a = 2f64.powf(-(basis.l0() as f64) / 2.0);
        coeffs.approx_mut().iter_mut().for_each(|v| *v = a);
        let generation_level = coeffs.index_set().l_max();
        let meta = DensityMetadata {
            class: None,
            seed: None,
            c_r: 0.0,
            generation_level,
            single_level: false,
            bumps: Vec::new(),
        };
        let mut model = DensityModel { basis, coeffs, bumps: Vec::new(), meta, cell_cdf: Vec::new(), min_value: 0.0 };
        model.build_tables()?;
        Ok(model)
    }

    pub fn uniform(basis: Arc<WaveletBasis>) -> Result<Self> {
        let idx = MultiresIndexSet::new(basis.l0(), basis.l0())?;
        Self::from_coefficients(basis, MultiresCoefficients::zeros(idx))
    }

    fn cells(&self) -> usize {
        self.basis.resolution_cells(self.coeffs.index_set().l_max())
    }

    fn build_tables(&mut self) -> Result<()> {
        let cells = self.cells();
        let grid = self.basis.reconstruct_grid(&self.coeffs, cells)?;
        let mut min_value = f64::INFINITY;
        let mut cdf = Vec::with_capacity(cells + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for v in &grid {
            min_value = min_value.min(*v);
            ensure!(*v >= 0.0, Argument, "density negative ({v}) on a cell");
            acc += v / cells as f64;
            cdf.push(acc);
        }
        let total = acc;
        cdf.iter_mut().for_each(|c| *c /= total);
        self.cell_cdf = cdf;
        self.min_value = min_value;
        Ok(())
    }

    pub fn basis(&self) -> &Arc<WaveletBasis> {
        &self.basis
    }
    /// Wavelet part of the density (bumps excluded).
    pub fn coefficients(&self) -> &MultiresCoefficients {
        &self.coeffs
    }
    pub fn metadata(&self) -> &DensityMetadata {
        &self.meta
    }
    pub fn has_bumps(&self) -> bool {
        !self.bumps.is_empty()
    }
    /// Minimum of the wavelet part over its constancy cells.
    pub fn min_base_value(&self) -> f64 {
        self.min_value
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        ensure!((0.0..=1.0).contains(&t), Domain, "t = {t} outside [0, 1]");
        Ok(self.eval_unchecked(t))
    }

    fn eval_unchecked(&self, t: f64) -> f64 {
        self.basis.reconstruct_unchecked(&self.coeffs, t) + self.bumps.iter().map(|b| b.eval(t)).sum::<f64>()
    }

    fn sample_base<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let cells = self.cell_cdf.len() - 1;
        let i = self.cell_cdf.partition_point(|&c| c <= u).clamp(1, cells) - 1;
        let (lo, hi) = (self.cell_cdf[i], self.cell_cdf[i + 1]);
        let frac = if hi > lo { ((u - lo) / (hi - lo)).clamp(0.0, 1.0 - f64::EPSILON) } else { rng.gen() };
        (i as f64 + frac) / cells as f64
    }

    /// `n` independent draws. The wavelet part is sampled by exact inverse CDF
    /// over its constancy cells; bumps are handled by rejection against it.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        if self.bumps.is_empty() {
            return (0..n).map(|_| self.sample_base(rng)).collect();
        }
        let extra: f64 = self.bumps.iter().map(|b| b.a.abs() * BUMP_SUP).sum();
        let envelope = 1.0 + extra / self.min_value;
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let x = self.sample_base(rng);
            let f0 = self.basis.reconstruct_unchecked(&self.coeffs, x);
            let g = f0 + self.bumps.iter().map(|b| b.eval(x)).sum::<f64>();
            if rng.gen::<f64>() * envelope * f0 <= g {
                out.push(x);
            }
        }
        out
    }

    /// Truth coefficients on `index_set`. Exact from the stored expansion
    /// unless bumps are present, in which case midpoint quadrature on
    /// `quadrature_points` is used for the bump part.
    pub fn truth_coefficients(&self, index_set: &MultiresIndexSet, quadrature_points: usize) -> Result<MultiresCoefficients> {
        let mut out = self.coeffs.resized(*index_set)?;
        if !self.bumps.is_empty() {
            let bumps = self.bumps.clone();
            let bc = crate::wavelet::exact_coefficients(
                &self.basis,
                |t| 1.0 + bumps.iter().map(|b| b.eval(t)).sum::<f64>(),
                index_set,
                quadrature_points,
            )?;
            for (o, v) in out.detail_mut().iter_mut().zip(bc.detail()) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// `sum` of squared truth detail coefficients above level `l`. Exact for
    /// models without bumps.
    pub fn tail_energy_above(&self, l: u32) -> f64 {
        let idx = self.coeffs.index_set();
        idx.levels().filter(|&j| j > l).map(|j| self.coeffs.level(j).iter().map(|v| v * v).sum::<f64>()).sum()
    }

    pub fn metadata_json(&self) -> String {
        serde_json::to_string(&self.meta).expect("metadata serializes")
    }
}

/// `C_R` default: the largest value keeping the Besov norm at most `R` and the
/// density above `0.1` for every draw.
pub fn default_c_r(class: &BesovClass, basis: &WaveletBasis, l_gen: u32, single_level: bool) -> f64 {
    let levels: Vec<u32> = if single_level { vec![l_gen] } else { (basis.l0()..=l_gen).collect() };
    let nlev = levels.len() as f64;
    let norm_cap = if class.q.is_infinite() { class.radius } else { class.radius * nlev.powf(-1.0 / class.q) };
    let sup: f64 = levels
        .iter()
        .map(|&l| 2f64.powf(-(l as f64) * class.alpha) * basis.overlap_weight(l, l))
        .sum();
    norm_cap.min(0.9 / sup)
}

/// Random density `1 + sum u_lk psi_lk` with `u_lk ~ U[-c_l, c_l]`,
/// `c_l = C_R 2^{-l(alpha + 1/2)}`. Only level `l_gen` is populated when
/// `single_level` is set.
pub fn sample_besov_density<R: Rng + ?Sized>(
    class: &BesovClass,
    basis: Arc<WaveletBasis>,
    l_gen: u32,
    c_r: Option<f64>,
    single_level: bool,
    rng: &mut R,
) -> Result<DensityModel> {
    class.validate()?;
    class.check_basis(&basis)?;
    let idx = basis.index_set(l_gen)?;
    let c_r = c_r.unwrap_or_else(|| default_c_r(class, &basis, l_gen, single_level));
    ensure!(c_r >= 0.0 && c_r.is_finite(), Config, "C_R must be nonnegative");
    for _ in 0..100 {
        let mut coeffs = MultiresCoefficients::zeros(idx);
        for l in idx.levels() {
            if single_level && l != l_gen {
                continue;
            }
            let c = c_r * 2f64.powf(-(l as f64) * (class.alpha + 0.5));
            for v in coeffs.level_mut(l) {
                *v = if c > 0.0 { rng.gen_range(-c..=c) } else { 0.0 };
            }
        }
        let grid = basis.reconstruct_grid(&coeffs_with_mean(&basis, &coeffs), basis.resolution_cells(l_gen))?;
        if grid.iter().all(|&v| v >= 0.1) {
            let mut model = DensityModel::from_coefficients(basis, coeffs)?;
            model.meta.class = Some(*class);
            model.meta.c_r = c_r;
            model.meta.single_level = single_level;
            return Ok(model);
        }
    }
    Err(FdpError::Generation(format!("no draw with density >= 0.1 in 100 tries; C_R = {c_r} too large")))
}

fn coeffs_with_mean(basis: &WaveletBasis, coeffs: &MultiresCoefficients) -> MultiresCoefficients {
    let mut c = coeffs.clone();
    let a = 2f64.powf(-(basis.l0() as f64) / 2.0);
    c.approx_mut().iter_mut().for_each(|v| *v = a);
    c
}

/// Seeded variant recording the seed in the metadata.
pub fn sample_besov_density_seeded(
    class: &BesovClass,
    basis: Arc<WaveletBasis>,
    l_gen: u32,
    c_r: Option<f64>,
    single_level: bool,
    seed: u64,
) -> Result<DensityModel> {
    let mut rng = crate::rng::stream(seed, &[0xB350]);
    let mut m = sample_besov_density(class, basis, l_gen, c_r, single_level, &mut rng)?;
    m.meta.seed = Some(seed);
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    /// `(l, k, |f_lk|, bound)` for coefficients above `R 2^{-l(alpha+1/2-1/p)}`.
    pub coefficient_violations: Vec<(u32, usize, f64, f64)>,
    /// `(l, energy, bound)` for levels with `sum_k f_lk^2 > R^2 2^{-2 l alpha}`.
    pub level_violations: Vec<(u32, f64, f64)>,
}

impl DecayReport {
    pub fn is_clean(&self) -> bool {
        self.coefficient_violations.is_empty() && self.level_violations.is_empty()
    }
}

pub fn decay_check(coeffs: &MultiresCoefficients, class: &BesovClass) -> DecayReport {
    let idx = coeffs.index_set();
    let mut report = DecayReport { coefficient_violations: Vec::new(), level_violations: Vec::new() };
    let tol = 1.0 + 1e-12;
    for l in idx.levels() {
        let lf = l as f64;
        let bound = class.radius * 2f64.powf(-lf * (class.alpha + 0.5 - 1.0 / class.p));
        let row = coeffs.level(l);
        for (k, v) in row.iter().enumerate() {
            if v.abs() > bound * tol {
                report.coefficient_violations.push((l, k + 1, v.abs(), bound));
            }
        }
        let energy: f64 = row.iter().map(|v| v * v).sum();
        let ebound = class.radius * class.radius * 2f64.powf(-2.0 * lf * class.alpha);
        if energy > ebound * tol {
            report.level_violations.push((l, energy, ebound));
        }
    }
    report
}

/// `g(x) = f0(x) + a h(b (t0 - x))`; the bump must fit inside `[0, 1]`.
pub fn bump_perturb(f0: &DensityModel, a: f64, b: f64, t0: f64) -> Result<DensityModel> {
    ensure!(b > 0.0 && b.is_finite(), Argument, "bump dilation must be positive");
    ensure!(
        t0 - 0.5 / b >= 0.0 && t0 + 0.5 / b <= 1.0,
        Argument,
        "bump support around t0 = {t0} with b = {b} leaves [0, 1]"
    );
    let mut g = f0.clone();
    if a == 0.0 {
        return Ok(g);
    }
    let bump = Bump { a, b, t0 };
    // The wavelet part is constant on cells; check the worst case per cell.
    let cells = f0.cells();
    let lo = ((t0 - 0.5 / b) * cells as f64).floor() as usize;
    let hi = (((t0 + 0.5 / b) * cells as f64).ceil() as usize).min(cells);
    let scan = 64usize;
    for c in lo..hi {
        let base = f0.eval_unchecked((c as f64 + 0.5) / cells as f64);
        for j in 0..=scan {
            let x = (c as f64 + j as f64 / scan as f64) / cells as f64;
            ensure!(
                base + bump.eval(x) >= 0.0,
                Argument,
                "perturbed density negative near {x}"
            );
        }
    }
    g.bumps.push(bump);
    g.meta.bumps.push(bump);
    Ok(g)
}

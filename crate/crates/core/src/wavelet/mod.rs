//! Periodized compactly supported wavelet bases on `[0, 1]`.
//!
//! Daubechies functions are generated by iterating the periodized orthogonal
//! synthesis filter bank down to `2^J` dyadic cells (the discrete cascade).
//! Every basis function is then piecewise constant on those cells, which keeps
//! the discrete system exactly orthonormal and lets grid computations over
//! the cells be exact. Haar functions are evaluated analytically.
//!
//! Shift indices are 1-based: `psi_{l,k}(t) = 2^{l/2} psi(2^l t - (k - 1))`,
//! periodized over `[0, 1)`.

mod filters;
mod index;
mod transform;

pub use index::{MultiresCoefficients, MultiresIndexSet};
pub use transform::{
    empirical_coefficients, exact_coefficients, read_coefficients_csv, write_coefficients_csv,
};

use crate::error::{ensure, FdpError, Result};
use serde::{Deserialize, Serialize};

/// Largest supported cascade depth (cells = `2^J`).
pub const MAX_DEPTH: u32 = 22;
/// Largest level the analytic Haar evaluation accepts.
pub const HAAR_MAX_LEVEL: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Haar,
    Daubechies,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::Haar => write!(f, "haar"),
            Family::Daubechies => write!(f, "daubechies"),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = FdpError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" => Ok(Family::Haar),
            "daubechies" | "db" => Ok(Family::Daubechies),
            other => Err(FdpError::Config(format!("unknown wavelet family `{other}`"))),
        }
    }
}

/// Values of the `k = 1` function of one level on the `2^J` cells, stored as
/// a circular window starting at cell `start`.
#[derive(Debug, Clone)]
struct LevelTable {
    start: usize,
    values: Vec<f64>,
}

impl LevelTable {
    fn from_cells(cells: Vec<f64>) -> Self {
        let n = cells.len();
        let nz: Vec<usize> = (0..n).filter(|&i| cells[i] != 0.0).collect();
        if nz.is_empty() {
            return LevelTable { start: 0, values: Vec::new() };
        }
        // The support is one circular run; find the largest zero gap to cut.
        let mut best_gap = 0;
        let mut start = nz[0];
        for w in 0..nz.len() {
            let a = nz[w];
            let b = nz[(w + 1) % nz.len()];
            let gap = (b + n - a - 1) % n;
            if gap > best_gap {
                best_gap = gap;
                start = b;
            }
        }
        let len = n - best_gap;
        let values = (0..len).map(|i| cells[(start + i) % n]).collect();
        LevelTable { start, values }
    }
}

#[derive(Debug, Clone)]
pub struct WaveletBasis {
    family: Family,
    regularity: usize,
    l0: u32,
    depth: u32,
    phi: Option<LevelTable>,
    psi: Vec<LevelTable>,
    sup_phi: f64,
    sup_psi: f64,
}

impl WaveletBasis {
    /// Builds a periodized basis. Haar requires `regularity == 1`; Daubechies
    /// supports `regularity` (vanishing moments) 2, 3 and 4.
    pub fn new(family: Family, regularity: usize, l0: u32, depth: u32) -> Result<Self> {
        ensure!(regularity >= 1, Config, "regularity must be >= 1");
        ensure!(depth >= 10, Config, "cascade depth must be >= 10, got {depth}");
        ensure!(depth <= MAX_DEPTH, Config, "cascade depth must be <= {MAX_DEPTH}, got {depth}");
        match family {
            Family::Haar => {
                ensure!(regularity == 1, Config, "Haar requires regularity 1, got {regularity}");
                ensure!(l0 <= HAAR_MAX_LEVEL, Config, "l0 too large");
                Ok(WaveletBasis {
                    family,
                    regularity,
                    l0,
                    depth,
                    phi: None,
                    psi: Vec::new(),
                    sup_phi: 1.0,
                    sup_psi: 1.0,
                })
            }
            Family::Daubechies => {
                ensure!(
                    (2..=4).contains(&regularity),
                    Config,
                    "Daubechies supports regularity 2..=4, got {regularity}"
                );
                ensure!(l0 < depth, Config, "l0 must be below the cascade depth");
                Self::build_daubechies(regularity, l0, depth)
            }
        }
    }

    /// Haar basis with `l0 = 0` and the default depth.
    pub fn haar() -> Self {
        Self::new(Family::Haar, 1, 0, 14).expect("valid Haar configuration")
    }

    fn build_daubechies(regularity: usize, l0: u32, depth: u32) -> Result<Self> {
        let h = filters::scaling_filter(regularity)
            .ok_or_else(|| FdpError::Config(format!("no filter for regularity {regularity}")))?;
        let g = filters::wavelet_filter(h);
        let cells = 1usize << depth;
        let scale = (cells as f64).sqrt();

        let synthesize = |level: u32, approx_delta: bool| -> Vec<f64> {
            let n = 1usize << level;
            let mut a = vec![0.0; n];
            let mut d = vec![0.0; n];
            if approx_delta {
                a[0] = 1.0;
            } else {
                d[0] = 1.0;
            }
            let mut cur = filters::synthesis_step(&a, &d, h, &g);
            while cur.len() < cells {
                let zeros = vec![0.0; cur.len()];
                cur = filters::synthesis_step(&cur, &zeros, h, &g);
            }
            cur.iter_mut().for_each(|v| *v *= scale);
            cur
        };

        let phi_cells = synthesize(l0, true);
        let sup_phi = phi_cells.iter().fold(0.0f64, |m, v| m.max(v.abs())) / 2f64.powf(l0 as f64 / 2.0);

        let mut psi = Vec::with_capacity((depth - l0) as usize);
        let mut sup_psi = 0.0f64;
        for level in l0..depth {
            let v = synthesize(level, false);
            let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            sup_psi = sup_psi.max(m / 2f64.powf(level as f64 / 2.0));
            psi.push(LevelTable::from_cells(v));
        }
        Ok(WaveletBasis {
            family: Family::Daubechies,
            regularity,
            l0,
            depth,
            phi: Some(LevelTable::from_cells(phi_cells)),
            psi,
            sup_phi,
            sup_psi,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }
    pub fn regularity(&self) -> usize {
        self.regularity
    }
    pub fn l0(&self) -> u32 {
        self.l0
    }
    pub fn depth(&self) -> u32 {
        self.depth
    }
    /// Sup-norm of the unscaled father wavelet (over the periodized tables).
    pub fn sup_phi(&self) -> f64 {
        self.sup_phi
    }
    /// Sup-norm of the unscaled mother wavelet; `|psi_lk| <= 2^{l/2} sup_psi`.
    pub fn sup_psi(&self) -> f64 {
        self.sup_psi
    }
    /// Support length of the mother wavelet in integer shifts.
    pub fn support_len(&self) -> usize {
        2 * self.regularity - 1
    }
    /// Wavelet-dependent constant of the per-coefficient Laplace scale.
    pub fn laplace_constant(&self) -> f64 {
        2.0 * self.sup_phi.max(self.sup_psi)
    }

    /// Highest detail level this basis can evaluate.
    pub fn max_level(&self) -> u32 {
        match self.family {
            Family::Haar => HAAR_MAX_LEVEL,
            Family::Daubechies => self.depth - 1,
        }
    }

    /// Number of cells on which every basis function is constant, for levels
    /// up to `level`.
    pub fn resolution_cells(&self, level: u32) -> usize {
        match self.family {
            Family::Haar => 1usize << (level + 1).max(self.l0),
            Family::Daubechies => 1usize << self.depth,
        }
    }

    pub fn index_set(&self, l_max: u32) -> Result<MultiresIndexSet> {
        ensure!(
            l_max <= self.max_level(),
            Config,
            "level {l_max} exceeds the basis maximum {}",
            self.max_level()
        );
        MultiresIndexSet::new(self.l0, l_max)
    }

    fn check_t(t: f64) -> Result<()> {
        ensure!((0.0..=1.0).contains(&t), Domain, "t = {t} outside [0, 1]");
        Ok(())
    }

    fn cell(&self, t: f64) -> usize {
        let cells = 1usize << self.depth;
        ((t * cells as f64) as usize).min(cells - 1)
    }

    /// `psi_{l,k}(t)`.
    pub fn eval_psi(&self, level: u32, k: usize, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        ensure!(
            level >= self.l0 && level <= self.max_level(),
            Argument,
            "level {level} outside [{}, {}]",
            self.l0,
            self.max_level()
        );
        ensure!(k >= 1 && k <= 1usize << level, Argument, "shift {k} outside 1..=2^{level}");
        let mut out = 0.0;
        self.for_each_psi(level, t, |kk, v| {
            if kk + 1 == k {
                out = v;
            }
        });
        Ok(out)
    }

    /// `phi_r(t)` at the primary level `l0`.
    pub fn eval_phi(&self, r: usize, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        ensure!(r >= 1 && r <= 1usize << self.l0, Argument, "shift {r} outside 1..=2^l0");
        let mut out = 0.0;
        self.for_each_phi(t, |rr, v| {
            if rr + 1 == r {
                out = v;
            }
        });
        Ok(out)
    }

    /// Calls `f(k - 1, psi_{l,k}(t))` for every shift with a nonzero value.
    /// `t` must lie in `[0, 1]`.
    pub fn for_each_psi<F: FnMut(usize, f64)>(&self, level: u32, t: f64, mut f: F) {
        match self.family {
            Family::Haar => {
                let n = 1usize << level;
                let x = t * n as f64;
                let q = (x as usize).min(n - 1);
                let frac = x - q as f64;
                let amp = (n as f64).sqrt();
                f(q, if frac < 0.5 { amp } else { -amp });
            }
            Family::Daubechies => {
                let table = &self.psi[(level - self.l0) as usize];
                self.scan_table(table, level, self.cell(t), &mut f);
            }
        }
    }

    /// Calls `f(r - 1, phi_r(t))` for every nonzero approximation function.
    pub fn for_each_phi<F: FnMut(usize, f64)>(&self, t: f64, mut f: F) {
        match self.family {
            Family::Haar => {
                let n = 1usize << self.l0;
                let q = ((t * n as f64) as usize).min(n - 1);
                f(q, (n as f64).sqrt());
            }
            Family::Daubechies => {
                let table = self.phi.as_ref().expect("daubechies phi table");
                self.scan_table(table, self.l0, self.cell(t), &mut f);
            }
        }
    }

    fn scan_table<F: FnMut(usize, f64)>(&self, table: &LevelTable, level: u32, cell: usize, f: &mut F) {
        let cells = 1usize << self.depth;
        let shifts = 1usize << level;
        let step = cells >> level;
        let w = table.values.len();
        if w == 0 {
            return;
        }
        let rel = (cell + cells - table.start) % cells;
        let span = w.div_ceil(step) + 1;
        if span >= shifts {
            for q in 0..shifts {
                let off = (rel + cells - q * step) % cells;
                if off < w {
                    f(q, table.values[off]);
                }
            }
        } else {
            let q_hi = rel / step;
            for j in 0..span {
                let q = (q_hi + shifts - j) % shifts;
                let off = (rel + cells - q * step) % cells;
                if off < w {
                    f(q, table.values[off]);
                }
            }
        }
    }

    /// Values `psi_{l,k}(t)` for all `k` at once (dense, length `2^l`).
    pub fn psi_level_dense(&self, level: u32, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; 1usize << level];
        self.for_each_psi(level, t, |q, v| out[q] = v);
        out
    }

    /// `max_t sum_{l, k} |psi_lk(t)| 2^{-l/2}` over levels `lo..=hi`: the
    /// overlap-weighted clique size of the support conflict graph. Equals the
    /// number of levels for Haar.
    pub fn overlap_weight(&self, lo: u32, hi: u32) -> f64 {
        match self.family {
            Family::Haar => (hi - lo + 1) as f64,
            Family::Daubechies => {
                let cells = 1usize << self.depth;
                let mut acc = vec![0.0f64; cells];
                for level in lo..=hi {
                    let step = cells >> level;
                    let table = &self.psi[(level - self.l0) as usize];
                    let norm = 2f64.powf(-(level as f64) / 2.0);
                    let mut per = vec![0.0f64; step];
                    for (i, v) in table.values.iter().enumerate() {
                        per[(table.start + i) % step] += v.abs() * norm;
                    }
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += per[c % step];
                    }
                }
                acc.into_iter().fold(0.0, f64::max)
            }
        }
    }

    /// Maximal number of detail functions over levels `lo..=hi` whose
    /// supports share a point.
    pub fn clique_size(&self, lo: u32, hi: u32) -> usize {
        match self.family {
            Family::Haar => (hi - lo + 1) as usize,
            Family::Daubechies => {
                let cells = 1usize << self.depth;
                let mut acc = vec![0usize; cells];
                for level in lo..=hi {
                    let step = cells >> level;
                    let table = &self.psi[(level - self.l0) as usize];
                    let mut per = vec![0usize; step];
                    for (i, v) in table.values.iter().enumerate() {
                        if *v != 0.0 {
                            per[(table.start + i) % step] += 1;
                        }
                    }
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += per[c % step];
                    }
                }
                acc.into_iter().max().unwrap_or(0)
            }
        }
    }

    /// `sum_r a_r phi_r(t) + sum_{l,k} d_{lk} psi_{lk}(t)`.
    pub fn reconstruct_point(&self, coeffs: &MultiresCoefficients, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        self.check_coeffs(coeffs)?;
        Ok(self.reconstruct_unchecked(coeffs, t))
    }

    pub(crate) fn reconstruct_unchecked(&self, coeffs: &MultiresCoefficients, t: f64) -> f64 {
        let mut acc = 0.0;
        self.for_each_phi(t, |r, v| acc += coeffs.approx()[r] * v);
        for level in coeffs.index_set().levels() {
            let row = coeffs.level(level);
            self.for_each_psi(level, t, |k, v| acc += row[k] * v);
        }
        acc
    }

    /// Reconstruction at the midpoints of `m` equal cells.
    pub fn reconstruct_grid(&self, coeffs: &MultiresCoefficients, m: usize) -> Result<Vec<f64>> {
        ensure!(m >= 2, Argument, "grid needs at least 2 cells");
        self.check_coeffs(coeffs)?;
        Ok((0..m)
            .map(|i| self.reconstruct_unchecked(coeffs, (i as f64 + 0.5) / m as f64))
            .collect())
    }

    fn check_coeffs(&self, coeffs: &MultiresCoefficients) -> Result<()> {
        let idx = coeffs.index_set();
        ensure!(idx.l0() == self.l0, Argument, "coefficient l0 {} != basis l0 {}", idx.l0(), self.l0);
        ensure!(idx.l_max() <= self.max_level(), Argument, "coefficients exceed basis levels");
        Ok(())
    }
}

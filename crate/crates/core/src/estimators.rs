//! Thresholding estimators on aggregated coefficients.

use crate::error::{ensure, Result};
use rand::Rng;
use crate::protocol::{FederatedConfig, Mechanism, Protocol};
use crate::rng::stream;
use crate::stats;
use crate::wavelet::{MultiresCoefficients, MultiresIndexSet, WaveletBasis};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// `(1 - tau/||y||)_+ y`.
pub fn soft_threshold_block(y: &[f64], tau: f64) -> Vec<f64> {
    let mut out = y.to_vec();
    soft_threshold_in_place(&mut out, tau);
    out
}

fn soft_threshold_in_place(y: &mut [f64], tau: f64) {
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let f = if norm > tau { 1.0 - tau / norm } else { 0.0 };
    y.iter_mut().for_each(|v| *v *= f);
}

/// `y` if `||y|| >= tau`, else zero.
pub fn hard_threshold_block(y: &[f64], tau: f64) -> Vec<f64> {
    let mut out = y.to_vec();
    hard_threshold_in_place(&mut out, tau);
    out
}

fn hard_threshold_in_place(y: &mut [f64], tau: f64) {
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < tau {
        y.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Scalar soft threshold.
pub fn soft_threshold(y: f64, tau: f64) -> f64 {
    y.signum() * (y.abs() - tau).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    l0: u32,
    sizes: Vec<usize>,
}

impl BlockPartition {
    pub fn l0(&self) -> u32 {
        self.l0
    }
    pub fn l_max(&self) -> u32 {
        self.l0 + self.sizes.len() as u32 - 1
    }
    /// `b_l`.
    pub fn size(&self, level: u32) -> usize {
        self.sizes[(level - self.l0) as usize]
    }
    /// Zero-based shift ranges of the blocks at `level`.
    pub fn blocks(&self, level: u32) -> impl Iterator<Item = std::ops::Range<usize>> {
        let b = self.size(level);
        (0..(1usize << level) / b).map(move |j| j * b..(j + 1) * b)
    }
    /// Term-by-term partition (every `b_l = 1`).
    pub fn singletons(l0: u32, l_star: u32) -> Self {
        BlockPartition { l0, sizes: vec![1; (l_star - l0 + 1) as usize] }
    }
}

/// `ceil(ln N)`.
pub fn log_target(big_n: usize) -> usize {
    ((big_n as f64).ln().ceil() as usize).max(1)
}

/// For each level the power of two dividing `2^l` that is closest to
/// `ceil(ln N)` (ties to the smaller one).
pub fn build_blocks(l0: u32, l_star: u32, big_n: usize) -> Result<BlockPartition> {
    ensure!(l_star >= l0, Argument, "L* = {l_star} below l0 = {l0}");
    let target = log_target(big_n) as f64;
    let sizes = (l0..=l_star)
        .map(|l| {
            let mut best = 1usize;
            for e in 0..=l {
                let b = 1usize << e;
                if (b as f64 - target).abs() < (best as f64 - target).abs() {
                    best = b;
                }
            }
            best
        })
        .collect();
    Ok(BlockPartition { l0, sizes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Global,
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappas {
    pub kappa1: f64,
    pub kappa2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Calibrated {
        mechanism: Mechanism,
        quantile: f64,
        /// Sample size of the statistical reference draws.
        statistical_n: usize,
        statistical_samples: usize,
        privacy_samples: usize,
        seed: u64,
    },
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    pub mode: ThresholdMode,
    pub l0: u32,
    pub l_star: u32,
    pub tau: Vec<f64>,
    pub kappas: Kappas,
    /// `L_{m,N}` (pointwise mode); `ln^2 N` in global mode.
    pub elbow: f64,
    pub private: bool,
    pub provenance: Provenance,
}

impl ThresholdSchedule {
    pub fn tau(&self, level: u32) -> f64 {
        self.tau[(level - self.l0) as usize]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }
}

/// `L_{m,N} = ln^2 N / m` if `m <= ln N`, else `ln N`.
pub fn elbow_factor(m: usize, big_n: usize) -> f64 {
    let ln = (big_n as f64).ln();
    if m as f64 <= ln {
        ln * ln / m as f64
    } else {
        ln
    }
}

/// `tau_l^2 = k1 ln N / N + k2 2^l F / (m n^2 eps^2)` with `F = ln^2 N`
/// (global) or `L_{m,N}` (pointwise). An infinite `epsilon` drops the privacy
/// term.
#[allow(clippy::too_many_arguments)]
pub fn build_schedule(
    mode: ThresholdMode,
    l0: u32,
    l_star: u32,
    m: usize,
    n: usize,
    epsilon: f64,
    kappas: Kappas,
    provenance: Provenance,
) -> Result<ThresholdSchedule> {
    ensure!(m >= 1 && n >= 1, Argument, "m and n must be >= 1");
    ensure!(epsilon > 0.0, Argument, "epsilon must be positive");
    ensure!(l_star >= l0, Argument, "L* below l0");
    let private = epsilon.is_finite();
    ensure!(kappas.kappa1 > 0.0, Argument, "kappa1 must be positive");
    ensure!(!private || kappas.kappa2 > 0.0, Argument, "kappa2 must be positive");
    let big_n = m * n;
    let ln = (big_n as f64).ln().max(f64::MIN_POSITIVE);
    let elbow = match mode {
        ThresholdMode::Global => ln * ln,
        ThresholdMode::Pointwise => elbow_factor(m, big_n),
    };
    let stat = kappas.kappa1 * ln / big_n as f64;
    let denom = m as f64 * (n as f64).powi(2) * epsilon * epsilon;
    let tau = (l0..=l_star)
        .map(|l| {
            let priv_term = if private { kappas.kappa2 * 2f64.powi(l as i32) * elbow / denom } else { 0.0 };
            (stat + priv_term).sqrt()
        })
        .collect();
    Ok(ThresholdSchedule { mode, l0, l_star, tau, kappas, elbow, private, provenance })
}

/// Work cap (points times levels over all draws) for the statistical part of
/// the calibration.
pub const STAT_CALIBRATION_BUDGET: f64 = 4e9;

/// Monte Carlo choice of the constants: `kappa1` puts `sqrt(kappa1 ln N'/N')`
/// at the `1 - 1/N'` quantile of block norms of empirical coefficients of `N'`
/// uniform draws, where `N' <= N` is the largest power-of-two fraction of `N`
/// whose draws fit [`STAT_CALIBRATION_BUDGET`]; `kappa2` puts the privacy
/// term at the `1 - 1/N` quantile of level-normalised block norms of one
/// server's noise with `theta = 1`. Block norms are pooled over all blocks of
/// all levels; at least `max(10^4, 20 N)` are collected.
///
/// In pointwise mode with `m > ln N` the elbow factor is `ln N` and the
/// average of `m` noise vectors is close to Gaussian, so `kappa2` is the larger
/// of the one-server value and the one matching the `1 - 1/N` quantile of a
/// Gaussian coordinate with the largest level-normalised variance of one
/// server's noise, divided by `m`.
pub fn calibrate_kappas(
    mode: ThresholdMode,
    basis: Arc<WaveletBasis>,
    index_set: &MultiresIndexSet,
    big_n: usize,
    m: usize,
    mechanism: Mechanism,
    seed: u64,
) -> Result<(Kappas, Provenance)> {
    let blocks = match mode {
        ThresholdMode::Global => build_blocks(index_set.l0(), index_set.l_max(), big_n)?,
        ThresholdMode::Pointwise => BlockPartition::singletons(index_set.l0(), index_set.l_max()),
    };
    let per_draw: usize = index_set.levels().map(|l| (1usize << l) / blocks.size(l)).sum();
    let draws_for = |n: usize| 10_000usize.max(20 * n).div_ceil(per_draw).max(1);
    let q_level = 1.0 - 1.0 / big_n as f64;
    let ln = (big_n as f64).ln();

    let levels = index_set.num_levels() as f64;
    let mut stat_n = big_n;
    while stat_n > 64 && draws_for(stat_n) as f64 * stat_n as f64 * levels > STAT_CALIBRATION_BUDGET {
        stat_n /= 2;
    }
    let stat_draws = draws_for(stat_n);
    let stat_norms = pooled_block_norms(&blocks, index_set, stat_draws, |r, out| {
        let mut rng = stream(seed, &[0xCA11, 1, r as u64]);
        let data: Vec<f64> = (0..stat_n).map(|_| rng.gen::<f64>()).collect();
        let c = crate::wavelet::empirical_coefficients(&basis, &data, index_set)?;
        out.copy_from_slice(c.detail());
        Ok(())
    })?;
    let q1 = stats::quantile(&stat_norms, 1.0 - 1.0 / stat_n as f64);
    let kappa1 = (q1 * q1 * stat_n as f64 / (stat_n as f64).ln()).max(f64::MIN_POSITIVE);
    let draws = draws_for(big_n);

    let (kappa2, privacy_samples) = if mechanism.is_private() {
        let mut cfg = FederatedConfig::new(1, 1, 1.0, seed, mechanism)?;
        cfg.l_star = Some(index_set.l_max());
        let proto = Protocol::with_index_set(cfg, basis.clone(), *index_set)?;
        let na = index_set.approx_len();
        let normalised = pooled_normalised_norms(&blocks, index_set, draws, |r, out| {
            let mut rng = stream(seed, &[0xCA11, 2, r as u64]);
            let mut acc = vec![0.0; index_set.total_len()];
            let mut buf = Vec::new();
            proto.add_noise(&mut rng, &mut acc, &mut buf)?;
            out.copy_from_slice(&acc[na..]);
            Ok(())
        })?;
        let q2 = stats::quantile(&normalised, q_level);
        let elbow = match mode {
            ThresholdMode::Global => ln * ln,
            ThresholdMode::Pointwise => elbow_factor(1, big_n),
        };
        let mut kappa2 = q2 * q2 / elbow;
        if mode == ThresholdMode::Pointwise && m as f64 > ln {
            // Singleton blocks: each draw contributes its detail vector in level order.
            let d = index_set.detail_len();
            let var = index_set
                .levels()
                .map(|l| {
                    let off = index_set.level_offset(l);
                    let len = 1usize << l;
                    let sq: f64 = normalised.chunks(d).flat_map(|c| &c[off..off + len]).map(|v| v * v).sum();
                    sq / (len * draws) as f64
                })
                .fold(0.0, f64::max);
            let mut rng = stream(seed, &[0xCA11, 3]);
            let gauss: Vec<f64> = (0..normalised.len())
                .map(|_| (var.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal)).abs())
                .collect();
            let qg = stats::quantile(&gauss, q_level);
            kappa2 = kappa2.max(qg * qg / ln);
        }
        (kappa2.max(f64::MIN_POSITIVE), normalised.len())
    } else {
        (1.0, 0)
    };
    let provenance = Provenance::Calibrated {
        mechanism,
        quantile: q_level,
        statistical_n: stat_n,
        statistical_samples: stat_norms.len(),
        privacy_samples,
        seed,
    };
    Ok((Kappas { kappa1, kappa2 }, provenance))
}

fn pooled_block_norms<F>(blocks: &BlockPartition, idx: &MultiresIndexSet, draws: usize, fill: F) -> Result<Vec<f64>>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    pooled(blocks, idx, draws, fill, false)
}

fn pooled_normalised_norms<F>(blocks: &BlockPartition, idx: &MultiresIndexSet, draws: usize, fill: F) -> Result<Vec<f64>>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    pooled(blocks, idx, draws, fill, true)
}

fn pooled<F>(blocks: &BlockPartition, idx: &MultiresIndexSet, draws: usize, fill: F, normalise: bool) -> Result<Vec<f64>>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    use rayon::prelude::*;
    let per: Vec<Result<Vec<f64>>> = (0..draws)
        .into_par_iter()
        .map(|r| {
            let mut v = vec![0.0; idx.detail_len()];
            fill(r, &mut v)?;
            let mut out = Vec::new();
            for l in idx.levels() {
                let off = idx.level_offset(l);
                let scale = if normalise { 2f64.powf(-(l as f64) / 2.0) } else { 1.0 };
                for b in blocks.blocks(l) {
                    let norm = v[off + b.start..off + b.end].iter().map(|x| x * x).sum::<f64>().sqrt();
                    out.push(norm * scale);
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for p in per {
        all.extend(p?);
    }
    Ok(all)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorTag {
    BtpwSoft,
    BtpwHard,
    Ttpw,
    LapTrunc,
    NpThresh,
}

impl std::fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorTag::BtpwSoft => "btpw-soft",
            EstimatorTag::BtpwHard => "btpw-hard",
            EstimatorTag::Ttpw => "ttpw",
            EstimatorTag::LapTrunc => "lap-trunc",
            EstimatorTag::NpThresh => "np-thresh",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Soft,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub coefficients: MultiresCoefficients,
    pub tag: EstimatorTag,
}

impl DensityEstimate {
    pub fn eval(&self, basis: &WaveletBasis, t: f64) -> Result<f64> {
        basis.reconstruct_point(&self.coefficients, t)
    }
    pub fn grid(&self, basis: &WaveletBasis, m: usize) -> Result<Vec<f64>> {
        basis.reconstruct_grid(&self.coefficients, m)
    }
}

/// Block thresholding of every detail level; the approximation block passes
/// through.
pub fn estimate_btpw(
    agg: &MultiresCoefficients,
    schedule: &ThresholdSchedule,
    blocks: &BlockPartition,
    variant: Variant,
) -> Result<DensityEstimate> {
    ensure!(schedule.mode == ThresholdMode::Global, Argument, "block thresholding needs a global schedule");
    check_levels(agg.index_set(), schedule.l0, schedule.l_star)?;
    ensure!(
        blocks.l0() == schedule.l0 && blocks.l_max() >= agg.index_set().l_max(),
        Argument,
        "block partition does not cover the coefficient levels"
    );
    let mut out = agg.clone();
    for l in agg.index_set().levels() {
        let tau = schedule.tau(l);
        let row = out.level_mut(l);
        for b in blocks.blocks(l) {
            match variant {
                Variant::Soft => soft_threshold_in_place(&mut row[b], tau),
                Variant::Hard => hard_threshold_in_place(&mut row[b], tau),
            }
        }
    }
    let tag = match (schedule.private, variant) {
        (false, _) => EstimatorTag::NpThresh,
        (true, Variant::Soft) => EstimatorTag::BtpwSoft,
        (true, Variant::Hard) => EstimatorTag::BtpwHard,
    };
    Ok(DensityEstimate { coefficients: out, tag })
}

fn check_levels(idx: &MultiresIndexSet, l0: u32, l_star: u32) -> Result<()> {
    ensure!(idx.l0() == l0, Argument, "coefficient l0 {} != schedule l0 {l0}", idx.l0());
    ensure!(idx.l_max() <= l_star, Argument, "coefficients go beyond L* = {l_star}");
    Ok(())
}

/// Term-by-term soft thresholding of every detail coefficient.
pub fn estimate_ttpw(agg: &MultiresCoefficients, schedule: &ThresholdSchedule) -> Result<DensityEstimate> {
    ensure!(schedule.mode == ThresholdMode::Pointwise, Argument, "term thresholding needs a pointwise schedule");
    check_levels(agg.index_set(), schedule.l0, schedule.l_star)?;
    let mut out = agg.clone();
    for l in agg.index_set().levels() {
        let tau = schedule.tau(l);
        out.level_mut(l).iter_mut().for_each(|v| *v = soft_threshold(*v, tau));
    }
    Ok(DensityEstimate { coefficients: out, tag: EstimatorTag::Ttpw })
}

/// Value of the term-by-term estimate at an interior point.
pub fn estimate_ttpw_at(
    basis: &WaveletBasis,
    agg: &MultiresCoefficients,
    schedule: &ThresholdSchedule,
    t0: f64,
) -> Result<f64> {
    ensure!(t0 > 0.0 && t0 < 1.0, Domain, "t0 = {t0} must lie in (0, 1)");
    ensure!(schedule.mode == ThresholdMode::Pointwise, Argument, "term thresholding needs a pointwise schedule");
    check_levels(agg.index_set(), schedule.l0, schedule.l_star)?;
    let mut acc = 0.0;
    basis.for_each_phi(t0, |r, v| acc += agg.approx()[r] * v);
    for l in agg.index_set().levels() {
        let tau = schedule.tau(l);
        let row = agg.level(l);
        basis.for_each_psi(l, t0, |k, v| acc += soft_threshold(row[k], tau) * v);
    }
    Ok(acc)
}

/// Keeps levels up to `l_alpha` and zeroes the rest; `l_alpha < l0` keeps the
/// approximation block only.
pub fn estimate_truncated_laplace(agg: &MultiresCoefficients, l_alpha: i64) -> DensityEstimate {
    let mut out = agg.clone();
    let idx = *agg.index_set();
    for l in idx.levels() {
        if (l as i64) > l_alpha {
            out.level_mut(l).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    DensityEstimate { coefficients: out, tag: EstimatorTag::LapTrunc }
}

/// Non-adaptive level from known smoothness: `log2(N)/(2a+1)` when the
/// statistical term dominates, `log2(m n^2 eps^2)/(2a+2)` otherwise, clamped
/// to `[l0 - 1, L*]`.
pub fn oracle_level(alpha: f64, m: usize, n: usize, epsilon: f64, l0: u32, l_star: u32) -> i64 {
    let big_n = (m * n) as f64;
    let stat_rate = big_n.powf(-2.0 * alpha / (2.0 * alpha + 1.0));
    let level = if !epsilon.is_finite() {
        big_n.log2() / (2.0 * alpha + 1.0)
    } else {
        let priv_base = m as f64 * (n as f64).powi(2) * epsilon * epsilon;
        let priv_rate = priv_base.powf(-2.0 * alpha / (2.0 * alpha + 2.0));
        if stat_rate >= priv_rate {
            big_n.log2() / (2.0 * alpha + 1.0)
        } else {
            priv_base.max(1.0).log2() / (2.0 * alpha + 2.0)
        }
    };
    (level.round() as i64).clamp(l0 as i64 - 1, l_star as i64)
}

//! Monte Carlo risk, theoretical rates and empirical checks of the tail and
//! oracle inequalities.

use crate::besov::DensityModel;
use crate::error::{ensure, FdpError, Result};
use crate::estimators::{
    build_blocks, build_schedule, calibrate_kappas, estimate_btpw, estimate_truncated_laplace, estimate_ttpw_at,
    oracle_level, soft_threshold, soft_threshold_block, Kappas, Provenance, ThresholdMode, Variant,
};
use crate::mechanism::{laplace, SurrogateSampler};
use crate::protocol::{FederatedConfig, Mechanism, Protocol};
use crate::rng::stream;
use crate::stats;
use crate::wavelet::{MultiresCoefficients, WaveletBasis};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub const MIN_RISK_REPS: usize = 50;
pub const MIN_INEQUALITY_REPS: usize = 10_000;

/// `N^{-2a/(2a+1)} + (m n^2 eps^2 / ln N)^{-2a/(2a+2)}`; an infinite `epsilon`
/// drops the second term.
pub fn theoretical_rate_global(alpha: f64, m: usize, n: usize, epsilon: f64) -> f64 {
    let big_n = (m * n) as f64;
    let stat = big_n.powf(-2.0 * alpha / (2.0 * alpha + 1.0));
    if !epsilon.is_finite() {
        return stat;
    }
    let base = m as f64 * (n as f64).powi(2) * epsilon * epsilon / big_n.ln().max(f64::MIN_POSITIVE);
    stat + base.powf(-2.0 * alpha / (2.0 * alpha + 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointwiseRate {
    pub value: f64,
    /// `L_{m,N}` used in the privacy term.
    pub elbow: f64,
    /// Set when `nu <= 1/2`, outside the range covered by the theory.
    pub outside_theory: bool,
}

/// `(N / ln N)^{-2nu/(2nu+1)} + (m n^2 eps^2 / L_{m,N})^{-2nu/(2nu+2)}`.
pub fn theoretical_rate_pointwise(nu: f64, m: usize, n: usize, epsilon: f64) -> PointwiseRate {
    let big_n = m * n;
    let nf = big_n as f64;
    let ln = nf.ln().max(f64::MIN_POSITIVE);
    let elbow = crate::estimators::elbow_factor(m, big_n);
    let mut value = (nf / ln).powf(-2.0 * nu / (2.0 * nu + 1.0));
    if epsilon.is_finite() {
        let base = m as f64 * (n as f64).powi(2) * epsilon * epsilon / elbow;
        value += base.powf(-2.0 * nu / (2.0 * nu + 2.0));
    }
    PointwiseRate { value, elbow, outside_theory: nu <= 0.5 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub estimator: String,
    pub mechanism: Mechanism,
    pub m: usize,
    pub n: usize,
    pub epsilon: f64,
    pub l_star: u32,
    pub replications: usize,
    pub risk: f64,
    pub stderr: f64,
    /// Squared truth mass above `L*`, included in `risk`.
    pub truth_tail: f64,
    pub theory: f64,
    pub ratio: f64,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

impl RiskReport {
    fn from_samples(
        estimator: String,
        config: &FederatedConfig,
        l_star: u32,
        samples: Vec<f64>,
        truth_tail: f64,
        theory: f64,
    ) -> Self {
        let risk = stats::mean(&samples);
        let stderr = stats::stderr(&samples);
        RiskReport {
            estimator,
            mechanism: config.mechanism,
            m: config.m,
            n: config.n,
            epsilon: config.epsilon,
            l_star,
            replications: samples.len(),
            risk,
            stderr,
            truth_tail,
            theory,
            ratio: if theory > 0.0 { risk / theory } else { f64::NAN },
            samples,
        }
    }

    pub fn big_n(&self) -> usize {
        self.m * self.n
    }
}

/// Threshold constants: fixed, or calibrated by Monte Carlo with a seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KappaSource {
    Manual(Kappas),
    Calibrated { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GlobalEstimator {
    /// Aggregated coefficients without thresholding.
    Passthrough,
    /// The truth itself (risk zero up to the tail).
    Truth,
    /// Approximation block only.
    ZeroDetail,
    Btpw { variant: Variant, kappas: KappaSource },
    /// Truncation at a level; `None` derives it from the truth's smoothness.
    Truncated { level: Option<i64> },
}

impl GlobalEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            GlobalEstimator::Passthrough => "passthrough",
            GlobalEstimator::Truth => "truth",
            GlobalEstimator::ZeroDetail => "zero-detail",
            GlobalEstimator::Btpw { variant: Variant::Soft, .. } => "btpw-soft",
            GlobalEstimator::Btpw { variant: Variant::Hard, .. } => "btpw-hard",
            GlobalEstimator::Truncated { .. } => "lap-trunc",
        }
    }
}

fn resolve_kappas(
    source: KappaSource,
    mode: ThresholdMode,
    protocol: &Protocol,
) -> Result<(Kappas, Provenance)> {
    match source {
        KappaSource::Manual(k) => Ok((k, Provenance::Manual)),
        KappaSource::Calibrated { seed } => calibrate_kappas(
            mode,
            protocol.basis().clone(),
            protocol.index_set(),
            protocol.config().big_n(),
            protocol.config().m,
            protocol.config().mechanism,
            seed,
        ),
    }
}

/// Global squared-L2 risk by Plancherel over `V_{L*}` plus the truth mass
/// above `L*`. Replication `r` uses protocol round `r`.
pub fn mc_global_risk(
    config: &FederatedConfig,
    basis: Arc<WaveletBasis>,
    density: &DensityModel,
    estimator: GlobalEstimator,
    reps: usize,
) -> Result<RiskReport> {
    ensure!(reps >= MIN_RISK_REPS, Argument, "need at least {MIN_RISK_REPS} replications, got {reps}");
    ensure!(
        !density.has_bumps(),
        Config,
        "global risk needs exact truth coefficients; perturbed models only support pointwise risk"
    );
    let protocol = Protocol::new(*config, basis.clone())?;
    let idx = *protocol.index_set();
    let l_star = idx.l_max();
    let truth = density.truth_coefficients(&idx, 0)?;
    let tail = density.tail_energy_above(l_star);
    let alpha = density.metadata().class.map(|c| c.alpha);

    let schedule = match estimator {
        GlobalEstimator::Btpw { kappas, .. } => {
            let (k, prov) = resolve_kappas(kappas, ThresholdMode::Global, &protocol)?;
            Some(build_schedule(ThresholdMode::Global, idx.l0(), l_star, config.m, config.n, effective_eps(config), k, prov)?)
        }
        _ => None,
    };
    let blocks = build_blocks(idx.l0(), l_star, config.big_n())?;
    let trunc_level = match estimator {
        GlobalEstimator::Truncated { level: Some(l) } => Some(l),
        GlobalEstimator::Truncated { level: None } => {
            let a = alpha.ok_or_else(|| FdpError::Config("truncation level needs the truth smoothness".into()))?;
            Some(oracle_level(a, config.m, config.n, effective_eps(config), idx.l0(), l_star))
        }
        _ => None,
    };

    let samples: Vec<Result<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let est: MultiresCoefficients = match estimator {
                GlobalEstimator::Truth => truth.clone(),
                GlobalEstimator::ZeroDetail => {
                    let mut z = MultiresCoefficients::zeros(idx);
                    z.approx_mut().copy_from_slice(truth.approx());
                    z
                }
                _ => {
                    let (agg, _) = protocol.simulate_round(density, r as u64)?;
                    match estimator {
                        GlobalEstimator::Passthrough => agg,
                        GlobalEstimator::Btpw { variant, .. } => {
                            estimate_btpw(&agg, schedule.as_ref().expect("schedule"), &blocks, variant)?.coefficients
                        }
                        GlobalEstimator::Truncated { .. } => {
                            estimate_truncated_laplace(&agg, trunc_level.expect("level")).coefficients
                        }
                        _ => unreachable!(),
                    }
                }
            };
            Ok(est.sub(&truth)?.sq_norm() + tail)
        })
        .collect();
    let samples = samples.into_iter().collect::<Result<Vec<f64>>>()?;
    let theory = alpha.map_or(f64::NAN, |a| theoretical_rate_global(a, config.m, config.n, effective_eps(config)));
    let mut name = estimator.name().to_string();
    if let (Some(l), GlobalEstimator::Truncated { .. }) = (trunc_level, estimator) {
        name = format!("{name}@{l}");
    }
    Ok(RiskReport::from_samples(name, config, l_star, samples, tail, theory))
}

fn effective_eps(config: &FederatedConfig) -> f64 {
    if config.mechanism.is_private() {
        config.epsilon
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PointwiseEstimator {
    Truth,
    Constant(f64),
    Ttpw { kappas: KappaSource },
}

/// Pointwise squared-error risk at `t0` against `f(t0)`.
pub fn mc_pointwise_risk(
    config: &FederatedConfig,
    basis: Arc<WaveletBasis>,
    density: &DensityModel,
    t0: f64,
    estimator: PointwiseEstimator,
    reps: usize,
) -> Result<RiskReport> {
    ensure!(reps >= MIN_RISK_REPS, Argument, "need at least {MIN_RISK_REPS} replications, got {reps}");
    ensure!(t0 > 0.0 && t0 < 1.0, Domain, "t0 = {t0} must lie in (0, 1)");
    let truth = density.eval(t0)?;
    let protocol = Protocol::new(*config, basis.clone())?;
    let idx = *protocol.index_set();
    let schedule = match estimator {
        PointwiseEstimator::Ttpw { kappas } => {
            let (k, prov) = resolve_kappas(kappas, ThresholdMode::Pointwise, &protocol)?;
            Some(build_schedule(ThresholdMode::Pointwise, idx.l0(), idx.l_max(), config.m, config.n, effective_eps(config), k, prov)?)
        }
        _ => None,
    };
    let samples: Vec<Result<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let v = match estimator {
                PointwiseEstimator::Truth => truth,
                PointwiseEstimator::Constant(c) => c,
                PointwiseEstimator::Ttpw { .. } => {
                    let (agg, _) = protocol.simulate_round(density, r as u64)?;
                    estimate_ttpw_at(&basis, &agg, schedule.as_ref().expect("schedule"), t0)?
                }
            };
            Ok((v - truth).powi(2))
        })
        .collect();
    let samples = samples.into_iter().collect::<Result<Vec<f64>>>()?;
    let theory = density
        .metadata()
        .class
        .map_or(f64::NAN, |c| theoretical_rate_pointwise(c.nu(), config.m, config.n, effective_eps(config)).value);
    let name = match estimator {
        PointwiseEstimator::Truth => "truth".to_string(),
        PointwiseEstimator::Constant(c) => format!("constant({c})"),
        PointwiseEstimator::Ttpw { .. } => "ttpw".to_string(),
    };
    Ok(RiskReport::from_samples(name, config, idx.l_max(), samples, 0.0, theory))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub x: Vec<f64>,
    pub risk: Vec<f64>,
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub target: Option<f64>,
    pub tolerance: Option<f64>,
    pub pass: Option<bool>,
}

impl RateFit {
    pub fn with_target(mut self, target: f64, tolerance: f64) -> Self {
        self.target = Some(target);
        self.tolerance = Some(tolerance);
        self.pass = Some((self.slope - target).abs() <= tolerance);
        self
    }

    pub fn verdict(&self) -> &'static str {
        match self.pass {
            Some(true) => "pass",
            Some(false) => "fail",
            None => "none",
        }
    }
}

/// Least squares on `(ln x, ln risk)`.
pub fn fit_rate_exponent(points: &[(f64, f64)]) -> Result<RateFit> {
    ensure!(points.len() >= 4, Argument, "need at least 4 points, got {}", points.len());
    ensure!(points.windows(2).all(|w| w[0].0 < w[1].0), Argument, "x must be strictly increasing");
    ensure!(points.iter().all(|p| p.0 > 0.0), Argument, "x must be positive");
    ensure!(points.iter().all(|p| p.1 > 0.0 && p.1.is_finite()), Argument, "risks must be positive");
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (intercept, slope, stderr) = stats::ols(&lx, &ly);
    Ok(RateFit {
        x: points.iter().map(|p| p.0).collect(),
        risk: points.iter().map(|p| p.1).collect(),
        slope,
        stderr,
        intercept,
        target: None,
        tolerance: None,
        pass: None,
    })
}

/// Noise law for tail and oracle-inequality experiments.
#[derive(Debug, Clone)]
pub enum NoiseSpec {
    Gaussian { sigma: f64 },
    Laplace { scale: f64 },
    /// A block of `d` coordinates at `level` of one surrogate draw over
    /// `V_{l_max}` with parameter `theta`.
    Surrogate { sampler: Arc<SurrogateSampler>, level: u32, theta: f64 },
}

impl NoiseSpec {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseSpec::Gaussian { .. } => "gaussian",
            NoiseSpec::Laplace { .. } => "laplace",
            NoiseSpec::Surrogate { .. } => "osc-surrogate",
        }
    }

    fn draw<R: Rng + ?Sized>(&self, d: usize, rng: &mut R, buf: &mut Vec<f64>, out: &mut [f64]) -> Result<()> {
        match self {
            NoiseSpec::Gaussian { sigma } => out.iter_mut().for_each(|v| *v = sigma * rng.sample::<f64, _>(StandardNormal)),
            NoiseSpec::Laplace { scale } => out.iter_mut().for_each(|v| *v = laplace(*scale, rng)),
            NoiseSpec::Surrogate { sampler, level, theta } => {
                let idx = sampler.index_set();
                ensure!(d <= 1usize << level, Argument, "block of {d} exceeds level {level}");
                let mut full = vec![0.0; idx.detail_len()];
                sampler.add_noise(*theta, rng, &mut full, buf)?;
                let off = idx.level_offset(*level);
                out.copy_from_slice(&full[off..off + d]);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub d: usize,
    pub noise: String,
    pub tau: f64,
    pub f_norm_sq: f64,
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    /// Stderr of the paired difference `lhs - rhs`.
    pub diff_stderr: f64,
    pub pass: bool,
}

/// `E||eta_tau(f + Z) - f||^2 <= min(||f||^2, 4 tau^2) + 4 E||Z||^2 1{||Z|| > tau}`,
/// both sides estimated from the same draws of `Z`.
pub fn oracle_inequality_check(f: &[f64], tau: f64, noise: &NoiseSpec, reps: usize, seed: u64) -> Result<OracleReport> {
    ensure!(reps >= MIN_INEQUALITY_REPS, Argument, "need at least {MIN_INEQUALITY_REPS} replications, got {reps}");
    ensure!(tau >= 0.0, Argument, "tau must be nonnegative");
    let d = f.len();
    let f2: f64 = f.iter().map(|v| v * v).sum();
    let det = f2.min(4.0 * tau * tau);
    let pairs: Vec<Result<(f64, f64)>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, &[0x0AC1, r as u64]);
            let mut z = vec![0.0; d];
            let mut buf = Vec::new();
            noise.draw(d, &mut rng, &mut buf, &mut z)?;
            let y: Vec<f64> = f.iter().zip(&z).map(|(a, b)| a + b).collect();
            let est = soft_threshold_block(&y, tau);
            let lhs: f64 = est.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum();
            let z2: f64 = z.iter().map(|v| v * v).sum();
            let rhs = det + if z2.sqrt() > tau { 4.0 * z2 } else { 0.0 };
            Ok((lhs, rhs))
        })
        .collect();
    let pairs = pairs.into_iter().collect::<Result<Vec<_>>>()?;
    let lhs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let rhs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let diff_stderr = stats::stderr(&diff);
    let (l, r) = (stats::mean(&lhs), stats::mean(&rhs));
    Ok(OracleReport {
        d,
        noise: noise.name().to_string(),
        tau,
        f_norm_sq: f2,
        lhs: l,
        lhs_stderr: stats::stderr(&lhs),
        rhs: r,
        rhs_stderr: stats::stderr(&rhs),
        diff_stderr,
        pass: l <= r + 3.0 * diff_stderr,
    })
}

/// Averaged privacy noise on one block, for tail curves.
#[derive(Debug, Clone)]
pub struct TailSpec {
    pub mechanism: Mechanism,
    pub basis: Arc<WaveletBasis>,
    /// Finest level of the index set the noise lives on.
    pub l_max: u32,
    pub level: u32,
    pub block: usize,
    pub m: usize,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub t: f64,
    pub prob: f64,
    pub prob_stderr: f64,
    pub trunc_second_moment: f64,
    pub trunc_stderr: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub mechanism: Mechanism,
    pub m: usize,
    pub level: u32,
    pub block: usize,
    pub theta: f64,
    /// Per-coordinate noise scale `u` used to express the bound.
    pub unit: f64,
    pub second_moment: f64,
    pub rows: Vec<TailRow>,
}

impl TailReport {
    /// Whether every truncated second moment lies below its bound.
    pub fn within_bound(&self) -> bool {
        self.rows.iter().all(|r| r.trunc_second_moment <= r.bound)
    }
}

/// Slack constant applied to both the prefactor and the exponent of the tail
/// bound.
pub const TAIL_SLACK: f64 = 10.0;

/// Tail bound for the averaged block norm, in units of the per-coordinate
/// noise scale `u`:
/// `S (t^2 + b u^2 / m) exp(b ln 5 - (m / S) min(z^2, z))` with `z = t / u`.
pub fn tail_bound(t: f64, unit: f64, block: usize, m: usize) -> f64 {
    let z = t / unit;
    let b = block as f64;
    let mf = m as f64;
    TAIL_SLACK * (t * t + b * unit * unit / mf) * (b * 5f64.ln() - mf / TAIL_SLACK * (z * z).min(z)).exp()
}

/// Per-coordinate noise scale at the block's level for one server: `c_l/theta`
/// for the surrogate body, the Laplace scale otherwise.
pub fn tail_unit(ts: &TailSpec) -> Result<f64> {
    let idx = ts.basis.index_set(ts.l_max)?;
    match ts.mechanism {
        Mechanism::OscSurrogate | Mechanism::OscExact => {
            let s = SurrogateSampler::new(&ts.basis, &idx)?;
            Ok(s.weights()[idx.level_offset(ts.level)] / ts.theta)
        }
        Mechanism::Laplace => Ok(ts.basis.laplace_constant() * 2f64.powf(ts.level as f64 / 2.0) / ts.theta),
        Mechanism::None => Err(FdpError::Config("tail curves need a private mechanism".into())),
    }
}

/// Empirical `P(||V_B|| >= t)` and `E ||V_B||^2 1{||V_B|| >= t}` for the
/// average `V` of `m` independent noise vectors, with the bound alongside.
pub fn tail_empirics(ts: &TailSpec, t_grid: &[f64], reps: usize, seed: u64) -> Result<TailReport> {
    ensure!(reps >= MIN_INEQUALITY_REPS, Argument, "need at least {MIN_INEQUALITY_REPS} replications, got {reps}");
    ensure!(ts.level <= ts.l_max, Argument, "level beyond the index set");
    ensure!(ts.block >= 1 && ts.block <= 1usize << ts.level, Argument, "bad block size");
    ensure!(ts.m >= 1 && ts.theta > 0.0, Argument, "m >= 1 and theta > 0 required");
    let idx = ts.basis.index_set(ts.l_max)?;
    let mut cfg = FederatedConfig::new(1, 1, ts.theta, seed, ts.mechanism)?;
    cfg.l_star = Some(ts.l_max);
    let proto = Protocol::with_index_set(cfg, ts.basis.clone(), idx)?;
    let unit = tail_unit(ts)?;
    let na = idx.approx_len();
    let off = na + idx.level_offset(ts.level);
    let norms: Vec<Result<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, &[0x7A11, r as u64]);
            let mut acc = vec![0.0; idx.total_len()];
            let mut buf = Vec::new();
            for _ in 0..ts.m {
                proto.add_noise(&mut rng, &mut acc, &mut buf)?;
            }
            let inv = 1.0 / ts.m as f64;
            Ok(acc[off..off + ts.block].iter().map(|v| (v * inv).powi(2)).sum::<f64>().sqrt())
        })
        .collect();
    let norms = norms.into_iter().collect::<Result<Vec<f64>>>()?;
    let sq: Vec<f64> = norms.iter().map(|v| v * v).collect();
    let rows = t_grid
        .iter()
        .map(|&t| {
            let ind: Vec<f64> = norms.iter().map(|&v| if v >= t { 1.0 } else { 0.0 }).collect();
            let tr: Vec<f64> = norms.iter().map(|&v| if v >= t { v * v } else { 0.0 }).collect();
            let p = stats::mean(&ind);
            TailRow {
                t,
                prob: p,
                prob_stderr: (p * (1.0 - p) / reps as f64).sqrt(),
                trunc_second_moment: stats::mean(&tr),
                trunc_stderr: stats::stderr(&tr),
                bound: tail_bound(t, unit, ts.block, ts.m),
            }
        })
        .collect();
    Ok(TailReport {
        mechanism: ts.mechanism,
        m: ts.m,
        level: ts.level,
        block: ts.block,
        theta: ts.theta,
        unit,
        second_moment: stats::mean(&sq),
        rows,
    })
}

/// Relative gap between `E[Z^2 1{Z >= tau}]` and
/// `tau^2 P(Z >= tau) + 2 int_tau^inf s P(Z >= s) ds` on an empirical sample;
/// the integral is exact for the empirical distribution.
pub fn layer_cake_gap(samples: &[f64], tau: f64) -> f64 {
    let mut z: Vec<f64> = samples.iter().copied().filter(|v| *v >= 0.0).collect();
    z.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let direct: f64 = z.iter().filter(|&&v| v >= tau).map(|v| v * v).sum::<f64>() / n;
    let above = |s: f64| z.len() - z.partition_point(|&v| v < s);
    let mut integral = 0.0;
    let mut prev = tau;
    // P(Z >= s) is constant between consecutive sample points.
    for (i, &v) in z.iter().enumerate() {
        if v <= tau {
            continue;
        }
        let count = (z.len() - i) as f64;
        integral += count / n * (v * v - prev * prev) / 2.0;
        prev = v;
    }
    let layered = tau * tau * above(tau) as f64 / n + 2.0 * integral;
    if direct == 0.0 {
        layered.abs()
    } else {
        (direct - layered).abs() / direct
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HodgeRow {
    pub p: f64,
    pub risk: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HodgeReport {
    pub m: usize,
    pub n: usize,
    pub epsilon: f64,
    pub c: f64,
    pub rows: Vec<HodgeRow>,
    pub risk_half: f64,
    pub sup_risk: f64,
    /// `sup_risk / risk_half` (infinite when `risk_half` is zero).
    pub ratio: f64,
    /// `1 / (m n^2 eps^2)`.
    pub minimax_scale: f64,
    pub laplace_scale: f64,
}

/// Private Hodge estimator of a Bernoulli mean: servers send
/// `mean + (2/(n eps)) Lap(1)`; the estimate snaps to `1/2` when the average
/// is within `C ln N / sqrt(m n eps^2)` of it.
pub fn hodge_demo(m: usize, n: usize, epsilon: f64, c: f64, p_grid: &[f64], reps: usize, seed: u64) -> Result<HodgeReport> {
    ensure!(m >= 1 && n >= 1, Argument, "m and n must be >= 1");
    ensure!(epsilon > 0.0 && epsilon.is_finite(), Argument, "epsilon must be positive");
    ensure!(c >= 0.0, Argument, "C must be nonnegative");
    ensure!(reps >= 2, Argument, "need at least 2 replications");
    ensure!(p_grid.iter().all(|p| *p > 0.0 && *p < 1.0), Argument, "p grid must lie in (0, 1)");
    let big_n = m * n;
    let band = c * (big_n as f64).ln() / (m as f64 * n as f64 * epsilon * epsilon).sqrt();
    let scale = 2.0 / (n as f64 * epsilon);
    let mut rows = Vec::with_capacity(p_grid.len());
    let mut risk_half = None;
    for (pi, &p) in p_grid.iter().enumerate() {
        let binom = Binomial::new(big_n as u64, p).map_err(|e| FdpError::Argument(e.to_string()))?;
        let errs: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream(seed, &[0x40D6, pi as u64, r as u64]);
                let successes = binom.sample(&mut rng) as f64;
                let mut noise = 0.0;
                for _ in 0..m {
                    noise += laplace(scale, &mut rng);
                }
                let avg = successes / big_n as f64 + noise / m as f64;
                let est = if (avg - 0.5).abs() <= band { 0.5 } else { avg };
                (est - p).powi(2)
            })
            .collect();
        let row = HodgeRow { p, risk: stats::mean(&errs), stderr: stats::stderr(&errs) };
        if p == 0.5 {
            risk_half = Some(row.risk);
        }
        rows.push(row);
    }
    let risk_half = risk_half.ok_or_else(|| FdpError::Argument("p grid must contain 1/2".into()))?;
    let sup_risk = rows.iter().fold(0.0f64, |a, r| a.max(r.risk));
    Ok(HodgeReport {
        m,
        n,
        epsilon,
        c,
        rows,
        risk_half,
        sup_risk,
        ratio: if risk_half > 0.0 { sup_risk / risk_half } else { f64::INFINITY },
        minimax_scale: 1.0 / (m as f64 * (n as f64).powi(2) * epsilon * epsilon),
        laplace_scale: scale,
    })
}

/// `p` grid around `1/2` spanning twice the snapping band, always containing
/// `1/2`.
pub fn hodge_grid(m: usize, n: usize, epsilon: f64, c: f64, points: usize) -> Vec<f64> {
    let big_n = (m * n) as f64;
    let band = c * big_n.ln() / (m as f64 * n as f64 * epsilon * epsilon).sqrt();
    let h = (2.0 * band).min(0.49);
    let half = points.max(1) as i64;
    (-half..=half).map(|j| 0.5 + h * j as f64 / half as f64).collect()
}

/// Empirical `P(D - E D >= tau)` against `2 exp(-tau^2 / (8 (s+1) / theta^2))`
/// for `D ~ Gamma(s + 1, 1/theta)` on a grid of `tau <= 2 (s+1)/theta`.
/// Returns `(tau, empirical, bound)` rows.
pub fn gamma_tail_rows(s: usize, theta: f64, draws: usize, seed: u64, points: usize) -> Result<Vec<(f64, f64, f64)>> {
    let mut rng = stream(seed, &[0x6A44]);
    let mut xs = Vec::with_capacity(draws);
    for _ in 0..draws {
        xs.push(crate::mechanism::sample_radius(s, theta, &mut rng)?);
    }
    let mean = (s as f64 + 1.0) / theta;
    let top = 2.0 * (s as f64 + 1.0) / theta;
    Ok((0..=points)
        .map(|i| {
            let tau = top * i as f64 / points as f64;
            let emp = xs.iter().filter(|&&d| d - mean >= tau).count() as f64 / draws as f64;
            let bound = 2.0 * (-tau * tau / (8.0 * (s as f64 + 1.0) / (theta * theta))).exp();
            (tau, emp, bound)
        })
        .collect())
}

/// Scalar soft threshold re-exported for experiment code.
pub fn eta(y: f64, tau: f64) -> f64 {
    soft_threshold(y, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::besov::{sample_besov_density, BesovClass};
    use rand::SeedableRng;

    #[test]
    fn rate_formulas() {
        assert!((theoretical_rate_global(1.0, 1, 1024, f64::INFINITY) - 1024f64.powf(-2.0 / 3.0)).abs() < 1e-15);
        // second term alone with base 10^6
        let n = 1000usize;
        let eps = (1e6 * (n as f64).ln() / (n * n) as f64).sqrt();
        let total = theoretical_rate_global(1.0, 1, n, eps);
        let second = total - (n as f64).powf(-2.0 / 3.0);
        assert!((second - 1e-3).abs() < 1e-12);
        let a = theoretical_rate_global(1.0, 4, 256, 1.0);
        let b = theoretical_rate_global(2.0, 4, 256, 1.0);
        assert!(b < a);
        let p = theoretical_rate_pointwise(1.0, 1, 4096, 1.0);
        assert!((p.elbow - 4096f64.ln().powi(2)).abs() < 1e-9);
        let p = theoretical_rate_pointwise(1.0, 4096, 1, 1.0);
        assert!((p.elbow - 4096f64.ln()).abs() < 1e-9);
        assert!(theoretical_rate_pointwise(0.4, 1, 100, 1.0).outside_theory);
    }

    #[test]
    fn fit_examples() {
        let pts: Vec<(f64, f64)> = (1..=6).map(|i| (2f64.powi(i), 2f64.powi(i).powf(-0.5))).collect();
        let f = fit_rate_exponent(&pts).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        let pts: Vec<(f64, f64)> = (1..=6).map(|i| (i as f64, 3.0 * (i as f64).powf(-0.8))).collect();
        let f = fit_rate_exponent(&pts).unwrap().with_target(-0.8, 0.01);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert_eq!(f.pass, Some(true));
        assert!(fit_rate_exponent(&pts[..3]).is_err());
        let bad = vec![(1.0, 1.0), (2.0, 0.0), (3.0, 1.0), (4.0, 1.0)];
        assert!(fit_rate_exponent(&bad).is_err());
    }

    #[test]
    fn trivial_risks() {
        let basis = Arc::new(WaveletBasis::haar());
        let class = BesovClass::new(0.8, 2.0, 2.0, 1.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let d = sample_besov_density(&class, basis.clone(), 6, None, false, &mut rng).unwrap();
        let cfg = FederatedConfig::new(4, 16, 1.0, 2, Mechanism::Laplace).unwrap();
        let r = mc_global_risk(&cfg, basis.clone(), &d, GlobalEstimator::Truth, 50).unwrap();
        assert_eq!(r.risk, 0.0);
        let u = DensityModel::uniform(basis.clone()).unwrap();
        let r = mc_global_risk(&cfg, basis.clone(), &u, GlobalEstimator::ZeroDetail, 50).unwrap();
        assert_eq!(r.risk, 0.0);
        let r = mc_pointwise_risk(&cfg, basis.clone(), &u, 0.3, PointwiseEstimator::Constant(1.5), 50).unwrap();
        assert!((r.risk - 0.25).abs() < 1e-15);
        let r = mc_pointwise_risk(&cfg, basis, &u, 0.3, PointwiseEstimator::Truth, 50).unwrap();
        assert_eq!(r.risk, 0.0);
    }

    #[test]
    fn truncated_variance_matches_brute_force() {
        // uniform truth, no privacy, truncation at level 3: each kept detail
        // coefficient has variance 1/N (Var psi_lk(X) = 1 under the uniform).
        let basis = Arc::new(WaveletBasis::haar());
        let u = DensityModel::uniform(basis.clone()).unwrap();
        let cfg = FederatedConfig::new(2, 128, f64::INFINITY, 3, Mechanism::None).unwrap();
        let r = mc_global_risk(&cfg, basis, &u, GlobalEstimator::Truncated { level: Some(3) }, 400).unwrap();
        let want = 15.0 / 256.0;
        assert!((r.risk - want).abs() < 3.0 * r.stderr, "{} vs {want} (se {})", r.risk, r.stderr);
    }

    #[test]
    fn oracle_inequality_noise_free() {
        let f = vec![0.3, -0.4];
        let r = oracle_inequality_check(&f, 0.1, &NoiseSpec::Gaussian { sigma: 0.0 }, 10_000, 1).unwrap();
        // ||f|| = 0.5 > tau: soft shrink by tau, error tau^2
        assert!((r.lhs - 0.01).abs() < 1e-15);
        assert!((r.rhs - 0.04).abs() < 1e-15);
        assert!(r.pass);
        let r = oracle_inequality_check(&[0.0; 4], 1e6, &NoiseSpec::Gaussian { sigma: 1.0 }, 10_000, 2).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.rhs, 0.0);
    }

    #[test]
    fn layer_cake_on_exponential() {
        use rand_distr::Exp1;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..20_000).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        for tau in [0.0, 0.5, 2.0] {
            assert!(layer_cake_gap(&xs, tau) < 1e-9);
        }
    }

    #[test]
    fn hodge_noise_free_limit() {
        let grid = hodge_grid(1, 4096, 1.0, 0.0, 3);
        let r = hodge_demo(1, 4096, 1.0, 0.0, &[0.5, 0.3], 4000, 1).unwrap();
        assert!(grid.contains(&0.5));
        let want = 0.25 / 4096.0 + 8.0 / (4096.0f64 * 4096.0);
        assert!((r.risk_half - want).abs() < 3.0 * r.rows[0].stderr);
        let doubled = hodge_demo(1, 4096, 2.0, 0.0, &[0.5], 10, 1).unwrap();
        assert!((doubled.laplace_scale - r.laplace_scale / 2.0).abs() < 1e-18);
    }
}

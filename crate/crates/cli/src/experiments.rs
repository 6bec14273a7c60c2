//! Experiment runners. The `*_sweep`, `tails` and `hodge` functions only
//! compute; [`run`] writes their artifacts.

use crate::config::{EstimatorChoice, ExperimentConfig, Kind, SweepAxis, SweepPoint};
use crate::criteria;
use crate::error::CliError;
use crate::output::{num, OutputDir};
use fdp_core::besov::{sample_besov_density_seeded, DensityModel};
use fdp_core::estimators::{
    build_blocks, build_schedule, calibrate_kappas, elbow_factor, estimate_btpw, estimate_truncated_laplace,
    oracle_level, Provenance, ThresholdMode, Variant,
};
use fdp_core::protocol::Protocol;
use fdp_core::risk::{
    fit_rate_exponent, hodge_demo, hodge_grid, mc_global_risk, mc_pointwise_risk, tail_empirics, tail_unit,
    GlobalEstimator, HodgeReport, KappaSource, PointwiseEstimator, RateFit, RiskReport, TailReport, TailSpec,
};
use fdp_core::rng::stream;
use fdp_core::wavelet::WaveletBasis;
use rand::RngCore;
use serde::Serialize;
use std::sync::Arc;
use std::time::Instant;

/// Risk at one sweep point, averaged over the configured truths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub m: usize,
    pub n: usize,
    pub epsilon: f64,
    pub mechanism: String,
    pub estimator: String,
    pub risk: f64,
    pub stderr: f64,
    pub theory: f64,
    pub ratio: f64,
    /// Abscissa of the rate fit.
    pub x: f64,
}

impl SweepRow {
    pub fn big_n(&self) -> usize {
        self.m * self.n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub x_variable: &'static str,
    pub fit: RateFit,
}

pub const SWEEP_HEADER: [&str; 10] = ["N", "m", "n", "epsilon", "mechanism", "estimator", "risk", "stderr", "theory", "ratio"];

fn sweep_csv_rows(rows: &[SweepRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.big_n().to_string(),
                r.m.to_string(),
                r.n.to_string(),
                num(r.epsilon),
                r.mechanism.clone(),
                r.estimator.clone(),
                num(r.risk),
                num(r.stderr),
                num(r.theory),
                num(r.ratio),
            ]
        })
        .collect()
}

/// Seed of truth number `i`.
pub fn truth_seed(seed: u64, i: usize) -> u64 {
    stream(seed, &[0x7207, i as u64]).next_u64()
}

pub fn truths(cfg: &ExperimentConfig, basis: &Arc<WaveletBasis>) -> Result<Vec<DensityModel>, CliError> {
    let class = cfg.class()?;
    (0..cfg.truths)
        .map(|i| {
            Ok(sample_besov_density_seeded(
                &class,
                basis.clone(),
                cfg.l_gen,
                cfg.c_r,
                cfg.single_level,
                truth_seed(cfg.seed, i),
            )?)
        })
        .collect()
}

fn kappa_source(cfg: &ExperimentConfig) -> KappaSource {
    match cfg.manual_kappas() {
        Some(k) => KappaSource::Manual(k),
        None => KappaSource::Calibrated { seed: cfg.calibration_seed() },
    }
}

pub fn global_estimator(cfg: &ExperimentConfig) -> Result<GlobalEstimator, CliError> {
    Ok(match cfg.estimator {
        EstimatorChoice::BtpwSoft => GlobalEstimator::Btpw { variant: Variant::Soft, kappas: kappa_source(cfg) },
        EstimatorChoice::BtpwHard => GlobalEstimator::Btpw { variant: Variant::Hard, kappas: kappa_source(cfg) },
        EstimatorChoice::LapTrunc => GlobalEstimator::Truncated { level: cfg.trunc_level },
        EstimatorChoice::Passthrough => GlobalEstimator::Passthrough,
        EstimatorChoice::Ttpw => {
            return Err(CliError::Validation("ttpw is a pointwise estimator; use pointwise-sweep".into()))
        }
    })
}

fn average(reports: &[RiskReport]) -> (f64, f64) {
    let t = reports.len() as f64;
    let risk = reports.iter().map(|r| r.risk).sum::<f64>() / t;
    let se = reports.iter().map(|r| r.stderr * r.stderr).sum::<f64>().sqrt() / t;
    (risk, se)
}

fn privacy_x(p: &SweepPoint, elbow: f64) -> f64 {
    p.m as f64 * (p.n as f64).powi(2) * p.epsilon * p.epsilon / elbow
}

fn privacy_axis(cfg: &ExperimentConfig) -> bool {
    cfg.mechanism.is_private() && matches!(cfg.sweep_axis, SweepAxis::M | SweepAxis::Epsilon)
}

/// Global risk over the sweep and the log-log fit. The abscissa is `N` for
/// sample-size sweeps and `m n^2 eps^2 / ln N` for privacy sweeps.
pub fn rate_sweep(cfg: &ExperimentConfig) -> Result<SweepResult, CliError> {
    let basis = cfg.basis()?;
    let models = truths(cfg, &basis)?;
    let estimator = global_estimator(cfg)?;
    let privacy = privacy_axis(cfg);
    let mut rows = Vec::new();
    for p in cfg.sweep_points()? {
        let fc = cfg.federated(p)?;
        let reports = models
            .iter()
            .map(|d| mc_global_risk(&fc, basis.clone(), d, estimator, cfg.reps))
            .collect::<Result<Vec<_>, _>>()?;
        let (risk, stderr) = average(&reports);
        let theory = reports[0].theory;
        let big_n = p.big_n() as f64;
        rows.push(SweepRow {
            m: p.m,
            n: p.n,
            epsilon: p.epsilon,
            mechanism: cfg.mechanism.to_string(),
            estimator: reports[0].estimator.clone(),
            risk,
            stderr,
            theory,
            ratio: risk / theory,
            x: if privacy { privacy_x(&p, big_n.ln()) } else { big_n },
        });
    }
    let a = cfg.alpha;
    let target = cfg.target_slope.unwrap_or(if privacy {
        -2.0 * a / (2.0 * a + 2.0)
    } else {
        -2.0 * a / (2.0 * a + 1.0)
    });
    let fit = fit(&rows, target, cfg.slope_tolerance)?;
    Ok(SweepResult { rows, x_variable: if privacy { "m*n^2*eps^2/ln(N)" } else { "N" }, fit })
}

/// Pointwise risk of TTPW at `t0`; abscissa `N / ln N` or
/// `m n^2 eps^2 / L_{m,N}`.
pub fn pointwise_sweep(cfg: &ExperimentConfig) -> Result<SweepResult, CliError> {
    if cfg.estimator != EstimatorChoice::Ttpw {
        return Err(CliError::Validation("pointwise-sweep needs estimator ttpw".into()));
    }
    let basis = cfg.basis()?;
    let models = truths(cfg, &basis)?;
    let privacy = privacy_axis(cfg);
    let mut rows = Vec::new();
    for p in cfg.sweep_points()? {
        let fc = cfg.federated(p)?;
        let reports = models
            .iter()
            .map(|d| {
                mc_pointwise_risk(&fc, basis.clone(), d, cfg.t0, PointwiseEstimator::Ttpw { kappas: kappa_source(cfg) }, cfg.reps)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (risk, stderr) = average(&reports);
        let theory = reports[0].theory;
        let big_n = p.big_n();
        rows.push(SweepRow {
            m: p.m,
            n: p.n,
            epsilon: p.epsilon,
            mechanism: cfg.mechanism.to_string(),
            estimator: reports[0].estimator.clone(),
            risk,
            stderr,
            theory,
            ratio: risk / theory,
            x: if privacy {
                privacy_x(&p, elbow_factor(p.m, big_n))
            } else {
                big_n as f64 / (big_n as f64).ln()
            },
        });
    }
    let nu = cfg.class()?.nu();
    let target = cfg.target_slope.unwrap_or(if privacy {
        -2.0 * nu / (2.0 * nu + 2.0)
    } else {
        -2.0 * nu / (2.0 * nu + 1.0)
    });
    let fit = fit(&rows, target, cfg.slope_tolerance)?;
    Ok(SweepResult {
        rows,
        x_variable: if privacy { "m*n^2*eps^2/L(m,N)" } else { "N/ln(N)" },
        fit,
    })
}

fn fit(rows: &[SweepRow], target: f64, tolerance: f64) -> Result<RateFit, CliError> {
    let mut pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.x, r.risk)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(fit_rate_exponent(&pts).map_err(CliError::from)?.with_target(target, tolerance))
}

pub fn tails(cfg: &ExperimentConfig) -> Result<TailReport, CliError> {
    let ts = TailSpec {
        mechanism: cfg.mechanism,
        basis: cfg.basis()?,
        l_max: cfg.tail_l_max(),
        level: cfg.tail_level,
        block: cfg.tail_block,
        m: cfg.m,
        theta: cfg.n as f64 * cfg.epsilon_value(),
    };
    let unit = tail_unit(&ts)?;
    let step = cfg.tail_step * unit / (cfg.m as f64).sqrt();
    let grid: Vec<f64> = (0..=cfg.tail_points).map(|j| j as f64 * step).collect();
    Ok(tail_empirics(&ts, &grid, cfg.reps, cfg.seed)?)
}

pub fn hodge(cfg: &ExperimentConfig) -> Result<Vec<HodgeReport>, CliError> {
    cfg.sweep_points()?
        .into_iter()
        .map(|p| {
            let grid = hodge_grid(p.m, p.n, p.epsilon, cfg.hodge_c, cfg.hodge_points);
            Ok(hodge_demo(p.m, p.n, p.epsilon, cfg.hodge_c, &grid, cfg.reps, cfg.seed)?)
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config_hash: String,
    kind: Kind,
    seed: u64,
    versions: Versions,
    wall_ms: u128,
    started_unix_ms: u128,
    files: &'a [String],
    config: &'a ExperimentConfig,
}

#[derive(Debug, Serialize)]
struct Versions {
    fdp: &'static str,
    fdp_core: &'static str,
}

/// Runs the configured experiment into `out` and returns a short summary.
pub fn run(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<String, CliError> {
    let started = Instant::now();
    let started_unix_ms = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    let summary = match cfg.kind {
        Kind::Simulate => simulate(cfg, out)?,
        Kind::RateSweep | Kind::PointwiseSweep => {
            let res = if cfg.kind == Kind::RateSweep { rate_sweep(cfg)? } else { pointwise_sweep(cfg)? };
            out.write_csv("risk.csv", &SWEEP_HEADER, &sweep_csv_rows(&res.rows))?;
            out.write_json(
                "fit.json",
                &serde_json::json!({
                    "x_variable": res.x_variable,
                    "x": res.fit.x,
                    "risk": res.fit.risk,
                    "slope": res.fit.slope,
                    "stderr": res.fit.stderr,
                    "intercept": res.fit.intercept,
                    "target": res.fit.target,
                    "tolerance": res.fit.tolerance,
                    "verdict": res.fit.verdict(),
                }),
            )?;
            format!(
                "slope {:.4} (stderr {:.4}) target {:.4} +/- {}: {}",
                res.fit.slope,
                res.fit.stderr,
                res.fit.target.unwrap_or(f64::NAN),
                res.fit.tolerance.unwrap_or(f64::NAN),
                res.fit.verdict()
            )
        }
        Kind::Tails => {
            let r = tails(cfg)?;
            let rows: Vec<Vec<String>> = r
                .rows
                .iter()
                .map(|x| {
                    vec![
                        num(x.t),
                        num(x.trunc_second_moment),
                        num(x.trunc_stderr),
                        num(x.prob),
                        num(x.prob_stderr),
                        num(x.bound),
                    ]
                })
                .collect();
            out.write_csv(
                "tails.csv",
                &["t", "empirical_tail", "empirical_tail_stderr", "tail_probability", "tail_probability_stderr", "bound"],
                &rows,
            )?;
            format!(
                "{} grid points, second moment {:.4e}, within bound: {}",
                r.rows.len(),
                r.second_moment,
                r.within_bound()
            )
        }
        Kind::Hodge => {
            let reports = hodge(cfg)?;
            let mut rows = Vec::new();
            for r in &reports {
                for row in &r.rows {
                    rows.push(vec![
                        (r.m * r.n).to_string(),
                        r.m.to_string(),
                        r.n.to_string(),
                        num(r.epsilon),
                        num(row.p),
                        num(row.risk),
                        num(row.stderr),
                    ]);
                }
            }
            out.write_csv("hodge.csv", &["N", "m", "n", "epsilon", "p", "risk", "stderr"], &rows)?;
            let summary: Vec<Vec<String>> = reports
                .iter()
                .map(|r| {
                    vec![
                        (r.m * r.n).to_string(),
                        r.m.to_string(),
                        r.n.to_string(),
                        num(r.risk_half),
                        num(r.sup_risk),
                        num(r.ratio),
                        num(r.sup_risk / r.minimax_scale),
                    ]
                })
                .collect();
            out.write_csv(
                "hodge_summary.csv",
                &["N", "m", "n", "risk_half", "sup_risk", "sup_over_half", "sup_over_minimax"],
                &summary,
            )?;
            format!("{} settings", reports.len())
        }
        Kind::Verify => {
            let outcomes = criteria::verify_suite(cfg.seed);
            let rows: Vec<Vec<String>> = outcomes
                .iter()
                .map(|o| vec![o.name.to_string(), o.verdict().to_string(), o.detail.clone()])
                .collect();
            out.write_csv("verify.csv", &["check", "verdict", "detail"], &rows)?;
            let mut table = String::new();
            for o in &outcomes {
                table.push_str(&format!("{:<28} {:<4} {}\n", o.name, o.verdict(), o.detail));
            }
            if outcomes.iter().any(|o| !o.pass) {
                print!("{table}");
                return Err(CliError::Runtime("verification failed".into()));
            }
            table
        }
    };
    let manifest = Manifest {
        config_hash: cfg.hash(),
        kind: cfg.kind,
        seed: cfg.seed,
        versions: Versions { fdp: env!("CARGO_PKG_VERSION"), fdp_core: fdp_core::VERSION },
        wall_ms: started.elapsed().as_millis(),
        started_unix_ms,
        files: &out.files().to_vec(),
        config: cfg,
    };
    out.write_json("manifest.json", &manifest)?;
    Ok(summary)
}

fn simulate(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<String, CliError> {
    let basis = cfg.basis()?;
    let truth = truths(cfg, &basis)?.remove(0);
    let point = cfg.sweep_points()?[0];
    let fc = cfg.federated(point)?;
    let protocol = Protocol::new(fc, basis.clone())?;
    let idx = *protocol.index_set();
    let (agg, meta) = protocol.simulate_round(&truth, 0)?;

    out.write_text("truth.json", &(truth.metadata_json() + "\n"))?;
    out.write_coefficients("truth.csv", truth.coefficients())?;
    out.write_json("round.json", &meta)?;
    out.write_coefficients("aggregate.csv", &agg)?;

    let eps = if fc.mechanism.is_private() { fc.epsilon } else { f64::INFINITY };
    let estimate = match cfg.estimator {
        EstimatorChoice::BtpwSoft | EstimatorChoice::BtpwHard => {
            let (kappas, provenance) = match cfg.manual_kappas() {
                Some(k) => (k, Provenance::Manual),
                None => calibrate_kappas(ThresholdMode::Global, basis.clone(), &idx, fc.big_n(), fc.m, fc.mechanism, cfg.calibration_seed())?,
            };
            let schedule = build_schedule(ThresholdMode::Global, idx.l0(), idx.l_max(), fc.m, fc.n, eps, kappas, provenance)?;
            out.write_text("schedule.json", &(schedule.to_json() + "\n"))?;
            let blocks = build_blocks(idx.l0(), idx.l_max(), fc.big_n())?;
            let variant = if cfg.estimator == EstimatorChoice::BtpwSoft { Variant::Soft } else { Variant::Hard };
            estimate_btpw(&agg, &schedule, &blocks, variant)?.coefficients
        }
        EstimatorChoice::LapTrunc => {
            let level = cfg
                .trunc_level
                .unwrap_or_else(|| oracle_level(cfg.alpha, fc.m, fc.n, eps, idx.l0(), idx.l_max()));
            estimate_truncated_laplace(&agg, level).coefficients
        }
        EstimatorChoice::Passthrough => agg.clone(),
        EstimatorChoice::Ttpw => return Err(CliError::Validation("simulate needs a global estimator".into())),
    };
    out.write_coefficients("estimate.csv", &estimate)?;

    let report = mc_global_risk(&fc, basis, &truth, global_estimator(cfg)?, cfg.reps)?;
    let row = SweepRow {
        m: fc.m,
        n: fc.n,
        epsilon: fc.epsilon,
        mechanism: fc.mechanism.to_string(),
        estimator: report.estimator.clone(),
        risk: report.risk,
        stderr: report.stderr,
        theory: report.theory,
        ratio: report.ratio,
        x: fc.big_n() as f64,
    };
    out.write_csv("risk.csv", &SWEEP_HEADER, &sweep_csv_rows(&[row]))?;
    Ok(format!(
        "risk {:.4e} (stderr {:.1e}) over {} replications; theory {:.4e}",
        report.risk, report.stderr, report.replications, report.theory
    ))
}

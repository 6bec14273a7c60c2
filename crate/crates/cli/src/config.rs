//! Flat JSON experiment configuration.

use crate::error::CliError;
use fdp_core::besov::BesovClass;
use fdp_core::estimators::Kappas;
use fdp_core::mechanism::McmcConfig;
use fdp_core::protocol::{FederatedConfig, Mechanism};
use fdp_core::wavelet::{Family, WaveletBasis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Simulate,
    RateSweep,
    PointwiseSweep,
    Tails,
    Hodge,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorChoice {
    BtpwSoft,
    BtpwHard,
    Ttpw,
    LapTrunc,
    Passthrough,
}

/// Which quantity a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// `sweep_n` lists `N`; `m` stays fixed unless `n = 1`, then `m = N`.
    NTotal,
    /// `sweep_m` lists `m` at fixed `n`.
    M,
    /// `sweep_epsilon` lists budgets at fixed `(m, n)`.
    Epsilon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    /// Output directory; not part of the config hash.
    pub out: Option<String>,
    /// Worker threads; not part of the config hash.
    pub threads: Option<usize>,

    pub m: usize,
    pub n: usize,
    /// `null` means no privacy (only with `mechanism = "none"`).
    pub epsilon: Option<f64>,
    pub mechanism: Mechanism,
    pub l_star: Option<u32>,
    pub mcmc_burn_in: usize,
    pub mcmc_thinning: usize,

    pub family: Family,
    pub regularity: usize,
    pub l0: u32,
    pub depth: u32,

    pub alpha: f64,
    pub p: f64,
    /// `null` means `q = inf`.
    pub q: Option<f64>,
    pub radius: f64,
    pub l_gen: u32,
    pub c_r: Option<f64>,
    pub single_level: bool,
    pub truths: usize,

    pub estimator: EstimatorChoice,
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
    pub calibration_seed: Option<u64>,
    pub trunc_level: Option<i64>,
    pub t0: f64,

    pub sweep_axis: SweepAxis,
    pub sweep_n: Vec<usize>,
    pub sweep_m: Vec<usize>,
    pub sweep_epsilon: Vec<f64>,
    pub target_slope: Option<f64>,
    pub slope_tolerance: f64,
    pub reps: usize,

    pub tail_level: u32,
    pub tail_block: usize,
    pub tail_points: usize,
    /// Grid spacing in units of the averaged per-coordinate noise scale.
    pub tail_step: f64,

    pub hodge_c: f64,
    pub hodge_points: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mcmc = McmcConfig::default();
        ExperimentConfig {
            kind: Kind::Simulate,
            seed: 0,
            out: None,
            threads: None,
            m: 16,
            n: 64,
            epsilon: Some(1.0),
            mechanism: Mechanism::Laplace,
            l_star: None,
            mcmc_burn_in: mcmc.burn_in,
            mcmc_thinning: mcmc.thinning,
            family: Family::Haar,
            regularity: 1,
            l0: 0,
            depth: 14,
            alpha: 0.8,
            p: 2.0,
            q: Some(2.0),
            radius: 1.0,
            l_gen: 10,
            c_r: None,
            single_level: false,
            truths: 1,
            estimator: EstimatorChoice::BtpwSoft,
            kappa1: None,
            kappa2: None,
            calibration_seed: None,
            trunc_level: None,
            t0: 0.5,
            sweep_axis: SweepAxis::NTotal,
            sweep_n: Vec::new(),
            sweep_m: Vec::new(),
            sweep_epsilon: Vec::new(),
            target_slope: None,
            slope_tolerance: 0.15,
            reps: 50,
            tail_level: 2,
            tail_block: 1,
            tail_points: 40,
            tail_step: 0.5,
            hodge_c: 1.0,
            hodge_points: 10,
        }
    }
}

/// One sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub m: usize,
    pub n: usize,
    pub epsilon: f64,
}

impl SweepPoint {
    pub fn big_n(&self) -> usize {
        self.m * self.n
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON with `out` and `threads` cleared.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        c.threads = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn epsilon_value(&self) -> f64 {
        self.epsilon.unwrap_or(f64::INFINITY)
    }

    pub fn basis(&self) -> Result<Arc<WaveletBasis>, CliError> {
        Ok(Arc::new(WaveletBasis::new(self.family, self.regularity, self.l0, self.depth)?))
    }

    pub fn class(&self) -> Result<BesovClass, CliError> {
        Ok(BesovClass::new(self.alpha, self.p, self.q.unwrap_or(f64::INFINITY), self.radius)?)
    }

    pub fn mcmc(&self) -> McmcConfig {
        McmcConfig { burn_in: self.mcmc_burn_in, thinning: self.mcmc_thinning }
    }

    pub fn federated(&self, point: SweepPoint) -> Result<FederatedConfig, CliError> {
        let mut f = FederatedConfig::new(point.m, point.n, point.epsilon, self.seed, self.mechanism)?;
        f.l_star = self.l_star;
        f.mcmc = self.mcmc();
        f.validate()?;
        Ok(f)
    }

    pub fn manual_kappas(&self) -> Option<Kappas> {
        match (self.kappa1, self.kappa2) {
            (Some(kappa1), Some(kappa2)) => Some(Kappas { kappa1, kappa2 }),
            (Some(kappa1), None) if !self.mechanism.is_private() => Some(Kappas { kappa1, kappa2: 1.0 }),
            _ => None,
        }
    }

    pub fn calibration_seed(&self) -> u64 {
        self.calibration_seed.unwrap_or(self.seed)
    }

    /// Sweep points in order; a single point from `(m, n, epsilon)` when no
    /// sweep list applies.
    pub fn sweep_points(&self) -> Result<Vec<SweepPoint>, CliError> {
        let eps = self.epsilon_value();
        let pts: Vec<SweepPoint> = match self.sweep_axis {
            SweepAxis::NTotal if !self.sweep_n.is_empty() => self
                .sweep_n
                .iter()
                .map(|&big| {
                    if self.n == 1 {
                        Ok(SweepPoint { m: big, n: 1, epsilon: eps })
                    } else {
                        if big % self.m != 0 || big < self.m {
                            return Err(CliError::Validation(format!("N = {big} is not a multiple of m = {}", self.m)));
                        }
                        Ok(SweepPoint { m: self.m, n: big / self.m, epsilon: eps })
                    }
                })
                .collect::<Result<_, _>>()?,
            SweepAxis::M if !self.sweep_m.is_empty() => {
                self.sweep_m.iter().map(|&m| SweepPoint { m, n: self.n, epsilon: eps }).collect()
            }
            SweepAxis::Epsilon if !self.sweep_epsilon.is_empty() => {
                self.sweep_epsilon.iter().map(|&e| SweepPoint { m: self.m, n: self.n, epsilon: e }).collect()
            }
            _ => vec![SweepPoint { m: self.m, n: self.n, epsilon: eps }],
        };
        Ok(pts)
    }

    /// Checks every referenced value without running anything expensive.
    pub fn validate(&self) -> Result<(), CliError> {
        let v = |msg: String| Err(CliError::Validation(msg));
        let basis = self.basis()?;
        if self.mechanism.is_private() {
            match self.epsilon {
                Some(e) if e > 0.0 && e.is_finite() => {}
                _ => return v("epsilon must be finite and positive for a private mechanism".into()),
            }
        }
        self.mcmc().validate()?;
        if self.reps == 0 {
            return v("reps must be positive".into());
        }
        if self.threads == Some(0) {
            return v("threads must be positive".into());
        }
        if !(self.slope_tolerance > 0.0) {
            return v("slope_tolerance must be positive".into());
        }
        if self.truths == 0 {
            return v("truths must be positive".into());
        }
        if self.sweep_epsilon.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return v("sweep_epsilon entries must be finite and positive".into());
        }
        let points = self.sweep_points()?;
        for w in points.windows(2) {
            if w[0] == w[1] {
                return v("sweep points must be distinct".into());
            }
        }
        for p in &points {
            let f = self.federated(*p)?;
            fdp_core::protocol::Protocol::new(f, basis.clone())?;
        }
        let needs_truth = matches!(self.kind, Kind::Simulate | Kind::RateSweep | Kind::PointwiseSweep);
        if needs_truth {
            let class = self.class()?;
            class.check_basis(&basis)?;
            if self.l_gen > basis.max_level() {
                return v(format!("l_gen = {} exceeds the basis depth", self.l_gen));
            }
        }
        match self.kind {
            Kind::RateSweep | Kind::PointwiseSweep if points.len() < 4 => {
                return v(format!("a rate fit needs at least 4 sweep points, got {}", points.len()))
            }
            Kind::PointwiseSweep if !(self.t0 > 0.0 && self.t0 < 1.0) => return v("t0 must lie in (0, 1)".into()),
            Kind::Tails => {
                if !self.mechanism.is_private() {
                    return v("tails need a private mechanism".into());
                }
                let l_max = self.tail_l_max();
                if self.tail_level > l_max || self.tail_block == 0 || self.tail_block > 1usize << self.tail_level {
                    return v("tail_level/tail_block do not fit the index set".into());
                }
                if !(self.tail_step > 0.0) || self.tail_points == 0 {
                    return v("tail grid must be nonempty with positive step".into());
                }
            }
            Kind::Hodge => {
                if !(self.hodge_c >= 0.0) || self.hodge_points == 0 {
                    return v("hodge_c must be >= 0 and hodge_points positive".into());
                }
                if !self.epsilon_value().is_finite() {
                    return v("the Hodge demo needs a finite epsilon".into());
                }
            }
            _ => {}
        }
        let ttpw = self.estimator == EstimatorChoice::Ttpw;
        match self.kind {
            Kind::PointwiseSweep if !ttpw => return v("pointwise-sweep needs estimator = \"ttpw\"".into()),
            Kind::Simulate | Kind::RateSweep if ttpw => {
                return v("ttpw is a pointwise estimator; use pointwise-sweep".into())
            }
            _ => {}
        }
        if matches!(self.estimator, EstimatorChoice::LapTrunc) && self.trunc_level.is_none() && !needs_truth {
            return v("lap-trunc needs trunc_level or a truth smoothness".into());
        }
        Ok(())
    }

    pub fn tail_l_max(&self) -> u32 {
        self.l_star.unwrap_or(self.tail_level.max(4))
    }
}

/// `(key, default, note)` rows for `list-defaults`.
pub fn defaults_table() -> Vec<(String, String, &'static str)> {
    let d = serde_json::to_value(ExperimentConfig::default()).expect("defaults serialize");
    let note = |k: &str| -> &'static str {
        match k {
            "kind" => "simulate | rate-sweep | pointwise-sweep | tails | hodge | verify",
            "seed" => "experiment seed; replication r of round r uses stream (seed, round, server)",
            "out" => "output directory (flag --out overrides); excluded from the config hash",
            "threads" => "worker threads (flag --threads, env FDP_THREADS); never changes results",
            "epsilon" => "privacy budget; null means no privacy and requires mechanism none",
            "mechanism" => "laplace | osc-exact | osc-surrogate | none",
            "l_star" => "finest level; null means L* = ceil(log2 N) (base 2); set to override",
            "mcmc_burn_in" => "hit-and-run burn-in (>= 1000); 5000 passes the 1-D KS check with margin",
            "mcmc_thinning" => "hit-and-run steps between draws (>= 10)",
            "family" => "haar | daubechies",
            "regularity" => "1 for Haar, 2..4 for Daubechies",
            "l0" => "coarsest level; the oscillation mechanisms need 0",
            "depth" => "dyadic resolution 2^depth of the Daubechies tables (10..22)",
            "q" => "Besov q; null means infinity",
            "l_gen" => "finest populated level of random truths",
            "c_r" => "coefficient envelope; null means min(R nlev^(-1/q), 0.9 / sup-norm bound)",
            "truths" => "number of random truths averaged per sweep point",
            "estimator" => "btpw-soft | btpw-hard | ttpw | lap-trunc | passthrough",
            "kappa1" => "manual kappa1; null means Monte Carlo calibration at the 1 - 1/N quantile",
            "kappa2" => "manual kappa2; null means calibration from one server's noise at theta = 1",
            "calibration_seed" => "seed of the kappa calibration; null means the experiment seed",
            "trunc_level" => "lap-trunc level; null means the rate-optimal level for the truth's alpha",
            "t0" => "evaluation point of pointwise risk",
            "sweep_axis" => "n-total | m | epsilon",
            "target_slope" => "null means the rate exponent of the dominant term",
            "slope_tolerance" => "accepted |slope - target|",
            "reps" => "Monte Carlo replications (risk needs >= 50)",
            "tail_step" => "tail grid spacing in units of the averaged noise scale",
            "hodge_c" => "snapping constant C of the Hodge estimator",
            "hodge_points" => "grid points on each side of 1/2",
            "m" => "number of servers",
            "n" => "samples per server",
            "alpha" => "Besov smoothness of random truths",
            "p" => "Besov p",
            "radius" => "Besov radius R",
            "single_level" => "populate only level l_gen of random truths",
            "sweep_n" => "total sample sizes N for sweep_axis = n-total",
            "sweep_m" => "server counts for sweep_axis = m",
            "sweep_epsilon" => "budgets for sweep_axis = epsilon",
            "tail_level" => "level of the block whose noise tail is measured",
            "tail_block" => "block size at tail_level",
            "tail_points" => "number of tail grid points after 0",
            _ => "",
        }
    };
    d.as_object()
        .expect("object")
        .iter()
        .map(|(k, v)| (k.clone(), v.to_string(), note(k)))
        .collect()
}

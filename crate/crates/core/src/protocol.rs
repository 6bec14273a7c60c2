//! The one-shot federated protocol: `m` servers with `n` samples each send one
//! noisy coefficient vector to a central aggregator.

use crate::besov::DensityModel;
use crate::error::{ensure, FdpError, Result};
use crate::mechanism::{laplace, ExactDirectionSampler, McmcConfig, NormOracle, SurrogateSampler};
use crate::rng::{stream, SimRng};
use crate::wavelet::{MultiresCoefficients, MultiresIndexSet, WaveletBasis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

/// Servers per deterministic reduction chunk.
const CHUNK: usize = 64;
const SERVER_TAG: u64 = 0x5E4E;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    Laplace,
    OscExact,
    OscSurrogate,
    None,
}

impl Mechanism {
    pub fn is_private(self) -> bool {
        self != Mechanism::None
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mechanism::Laplace => "laplace",
            Mechanism::OscExact => "osc-exact",
            Mechanism::OscSurrogate => "osc-surrogate",
            Mechanism::None => "none",
        })
    }
}

impl std::str::FromStr for Mechanism {
    type Err = FdpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplace" => Ok(Mechanism::Laplace),
            "osc-exact" => Ok(Mechanism::OscExact),
            "osc-surrogate" => Ok(Mechanism::OscSurrogate),
            "none" => Ok(Mechanism::None),
            other => Err(FdpError::Config(format!("unknown mechanism `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FederatedConfig {
    pub m: usize,
    pub n: usize,
    /// Per-server privacy budget; ignored when the mechanism is `None`.
    pub epsilon: f64,
    pub seed: u64,
    pub mechanism: Mechanism,
    /// Overrides `L* = ceil(log2 N)`.
    pub l_star: Option<u32>,
    pub mcmc: McmcConfig,
}

impl FederatedConfig {
    pub fn new(m: usize, n: usize, epsilon: f64, seed: u64, mechanism: Mechanism) -> Result<Self> {
        let c = FederatedConfig { m, n, epsilon, seed, mechanism, l_star: None, mcmc: McmcConfig::default() };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.m >= 1, Config, "m must be >= 1");
        ensure!(self.n >= 1, Config, "n must be >= 1");
        ensure!(self.m.checked_mul(self.n).is_some(), Config, "N = m n overflows");
        if self.mechanism.is_private() {
            ensure!(
                self.epsilon > 0.0 && self.epsilon.is_finite(),
                Config,
                "epsilon must be positive and finite for a private mechanism, got {}",
                self.epsilon
            );
        }
        if self.mechanism == Mechanism::OscExact {
            self.mcmc.validate()?;
        }
        Ok(())
    }

    pub fn big_n(&self) -> usize {
        self.m * self.n
    }

    /// `theta = n epsilon`.
    pub fn theta(&self) -> f64 {
        self.n as f64 * self.epsilon
    }

    /// `ceil(log2 N)` unless overridden.
    pub fn l_star(&self) -> u32 {
        self.l_star.unwrap_or_else(|| ceil_log2(self.big_n()))
    }
}

pub fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerTranscript {
    pub server: usize,
    pub coefficients: MultiresCoefficients,
    pub mechanism: Mechanism,
    /// Radius `D` of the norm-mechanism draw.
    pub radius: Option<f64>,
    /// `c_sens / theta`; level `l` uses `2^{l/2}` times this.
    pub laplace_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetadata {
    pub m: usize,
    pub n: usize,
    pub epsilon: f64,
    pub mechanism: Mechanism,
    #[serde(rename = "L_star")]
    pub l_star: u32,
    pub seed: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
enum Noise {
    None,
    Laplace { base: f64 },
    Surrogate(SurrogateSampler),
    Exact(Box<NormOracle>),
}

/// A configured round: basis, index set `V_{L*}` and the noise source.
#[derive(Debug, Clone)]
pub struct Protocol {
    config: FederatedConfig,
    basis: Arc<WaveletBasis>,
    index_set: MultiresIndexSet,
    noise: Noise,
}

impl Protocol {
    pub fn new(config: FederatedConfig, basis: Arc<WaveletBasis>) -> Result<Self> {
        let l_star = config.l_star().max(basis.l0());
        ensure!(
            l_star <= basis.max_level(),
            Config,
            "L* = {l_star} exceeds the basis maximum level {}; raise the cascade depth or set an L* override",
            basis.max_level()
        );
        let idx = basis.index_set(l_star)?;
        Self::with_index_set(config, basis, idx)
    }

    pub fn with_index_set(config: FederatedConfig, basis: Arc<WaveletBasis>, index_set: MultiresIndexSet) -> Result<Self> {
        config.validate()?;
        ensure!(index_set.l0() == basis.l0(), Config, "index set l0 differs from basis l0");
        if matches!(config.mechanism, Mechanism::OscExact | Mechanism::OscSurrogate) {
            ensure!(
                basis.l0() == 0,
                Config,
                "the oscillation-norm mechanisms need l0 = 0 (approximation block constant)"
            );
        }
        let noise = match config.mechanism {
            Mechanism::None => Noise::None,
            Mechanism::Laplace => Noise::Laplace { base: basis.laplace_constant() / config.theta() },
            Mechanism::OscSurrogate => Noise::Surrogate(SurrogateSampler::new(&basis, &index_set)?),
            Mechanism::OscExact => Noise::Exact(Box::new(NormOracle::new(basis.clone(), index_set)?)),
        };
        Ok(Protocol { config, basis, index_set, noise })
    }

    pub fn config(&self) -> &FederatedConfig {
        &self.config
    }
    pub fn basis(&self) -> &Arc<WaveletBasis> {
        &self.basis
    }
    pub fn index_set(&self) -> &MultiresIndexSet {
        &self.index_set
    }

    fn server_rng(&self, round: u64, j: usize) -> SimRng {
        stream(self.config.seed, &[SERVER_TAG, round, j as u64])
    }

    /// Adds this server's transcript into `acc` (approx block first, then
    /// details) and returns the noise metadata.
    fn server_into(&self, density: &DensityModel, rng: &mut SimRng, acc: &mut [f64], buf: &mut Vec<f64>) -> Result<(Option<f64>, Option<f64>)> {
        let idx = &self.index_set;
        let na = idx.approx_len();
        let data = density.sample(self.config.n, rng);
        let w = 1.0 / self.config.n as f64;
        for &x in &data {
            self.basis.for_each_phi(x, |r, v| acc[r] += w * v);
            for level in idx.levels() {
                let off = na + idx.level_offset(level);
                self.basis.for_each_psi(level, x, |k, v| acc[off + k] += w * v);
            }
        }
        self.add_noise(rng, acc, buf)
    }

    /// Adds one privacy-noise draw to a transcript vector (approx block
    /// first, then details). Returns `(radius, laplace_scale)` metadata.
    pub fn add_noise(&self, rng: &mut SimRng, acc: &mut [f64], buf: &mut Vec<f64>) -> Result<(Option<f64>, Option<f64>)> {
        let idx = &self.index_set;
        let na = idx.approx_len();
        let (approx, details) = acc.split_at_mut(na);
        match &self.noise {
            Noise::None => Ok((None, None)),
            Noise::Laplace { base } => {
                for level in idx.levels() {
                    let scale = base * 2f64.powf(level as f64 / 2.0);
                    let off = idx.level_offset(level);
                    for v in &mut details[off..off + (1usize << level)] {
                        *v += laplace(scale, rng);
                    }
                }
                if idx.l0() > 0 {
                    let scale = base * 2f64.powf(idx.l0() as f64 / 2.0);
                    for v in approx.iter_mut() {
                        *v += laplace(scale, rng);
                    }
                }
                Ok((None, Some(*base)))
            }
            Noise::Surrogate(s) => {
                let d = s.add_noise(self.config.theta(), rng, details, buf)?;
                Ok((Some(d), None))
            }
            Noise::Exact(oracle) => {
                let d = crate::mechanism::sample_radius(oracle.dim(), self.config.theta(), rng)?;
                let u = ExactDirectionSampler::new(oracle, self.config.mcmc)?.next(rng)?;
                for (v, x) in details.iter_mut().zip(&u) {
                    *v += d * x;
                }
                Ok((Some(d), None))
            }
        }
    }

    /// Transcript of server `j` in round `round`.
    pub fn run_server(&self, density: &DensityModel, round: u64, j: usize) -> Result<ServerTranscript> {
        ensure!(j < self.config.m, Argument, "server index {j} >= m = {}", self.config.m);
        let mut rng = self.server_rng(round, j);
        let mut acc = vec![0.0; self.index_set.total_len()];
        let mut buf = Vec::new();
        let (radius, laplace_scale) = self.server_into(density, &mut rng, &mut acc, &mut buf)?;
        let na = self.index_set.approx_len();
        let detail = acc.split_off(na);
        Ok(ServerTranscript {
            server: j,
            coefficients: MultiresCoefficients::from_parts(self.index_set, acc, detail)?,
            mechanism: self.config.mechanism,
            radius,
            laplace_scale,
        })
    }

    /// Runs all `m` servers and averages their transcripts. Servers are
    /// processed in fixed chunks whose partial sums are combined in order, so
    /// the result does not depend on the number of worker threads.
    pub fn simulate_round(&self, density: &DensityModel, round: u64) -> Result<(MultiresCoefficients, RoundMetadata)> {
        let start = Instant::now();
        let m = self.config.m;
        let len = self.index_set.total_len();
        let chunks: Vec<(usize, usize)> = (0..m).step_by(CHUNK).map(|a| (a, (a + CHUNK).min(m))).collect();
        let partials: Vec<Result<Vec<f64>>> = chunks
            .par_iter()
            .map(|&(a, b)| {
                let mut acc = vec![0.0; len];
                let mut buf = Vec::new();
                for j in a..b {
                    let mut rng = self.server_rng(round, j);
                    self.server_into(density, &mut rng, &mut acc, &mut buf)?;
                }
                Ok(acc)
            })
            .collect();
        let mut total = vec![0.0; len];
        for p in partials {
            for (t, v) in total.iter_mut().zip(p?) {
                *t += v;
            }
        }
        let inv = 1.0 / m as f64;
        total.iter_mut().for_each(|v| *v *= inv);
        let na = self.index_set.approx_len();
        let detail = total.split_off(na);
        let coeffs = MultiresCoefficients::from_parts(self.index_set, total, detail)?;
        let meta = RoundMetadata {
            m,
            n: self.config.n,
            epsilon: self.config.epsilon,
            mechanism: self.config.mechanism,
            l_star: self.index_set.l_max(),
            seed: self.config.seed,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        Ok((coeffs, meta))
    }
}

/// Transcript of server `server_index` for round 0.
pub fn run_server(
    config: &FederatedConfig,
    basis: Arc<WaveletBasis>,
    density: &DensityModel,
    index_set: &MultiresIndexSet,
    server_index: usize,
) -> Result<ServerTranscript> {
    Protocol::with_index_set(*config, basis, *index_set)?.run_server(density, 0, server_index)
}

/// Coordinate-wise mean of the transcripts.
pub fn aggregate(transcripts: &[ServerTranscript]) -> Result<MultiresCoefficients> {
    let first = transcripts.first().ok_or_else(|| FdpError::Protocol("no transcripts".into()))?;
    let idx = *first.coefficients.index_set();
    let mut out = MultiresCoefficients::zeros(idx);
    for t in transcripts {
        if *t.coefficients.index_set() != idx {
            return Err(FdpError::Protocol(format!("server {} uses a different index set", t.server)));
        }
        for (o, v) in out.approx_mut().iter_mut().zip(t.coefficients.approx()) {
            *o += v;
        }
        for (o, v) in out.detail_mut().iter_mut().zip(t.coefficients.detail()) {
            *o += v;
        }
    }
    let inv = 1.0 / transcripts.len() as f64;
    out.approx_mut().iter_mut().for_each(|v| *v *= inv);
    out.detail_mut().iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

/// Round 0 of [`Protocol::simulate_round`] with `L*` from the config.
pub fn simulate_round(
    config: &FederatedConfig,
    basis: Arc<WaveletBasis>,
    density: &DensityModel,
) -> Result<(MultiresCoefficients, RoundMetadata)> {
    Protocol::new(*config, basis)?.simulate_round(density, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::empirical_coefficients;

    fn uniform() -> (Arc<WaveletBasis>, DensityModel) {
        let b = Arc::new(WaveletBasis::haar());
        let d = DensityModel::uniform(b.clone()).unwrap();
        (b, d)
    }

    #[test]
    fn ceil_log2_values() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(1024), 10);
        assert_eq!(ceil_log2(1025), 11);
    }

    #[test]
    fn config_validation() {
        assert!(FederatedConfig::new(1, 1, f64::INFINITY, 0, Mechanism::Laplace).is_err());
        assert!(FederatedConfig::new(0, 1, 1.0, 0, Mechanism::Laplace).is_err());
        assert!(FederatedConfig::new(1, 1, f64::INFINITY, 0, Mechanism::None).is_ok());
    }

    #[test]
    fn non_private_uniform_transcript_is_small() {
        let (b, d) = uniform();
        let mut c = FederatedConfig::new(1, 10_000, f64::INFINITY, 3, Mechanism::None).unwrap();
        c.l_star = Some(6);
        let idx = b.index_set(6).unwrap();
        let t = run_server(&c, b.clone(), &d, &idx, 0).unwrap();
        for p in 0..idx.detail_len() {
            let (l, _) = idx.detail_index(p);
            assert!(t.coefficients.detail()[p].abs() <= 4.0 * 2f64.powf(l as f64 / 2.0) / 100.0);
        }
        let t2 = run_server(&c, b, &d, &idx, 0).unwrap();
        assert_eq!(t, t2);
    }

    #[test]
    fn aggregate_examples() {
        let (b, d) = uniform();
        let c = FederatedConfig::new(3, 5, 1.0, 1, Mechanism::Laplace).unwrap();
        let idx = b.index_set(3).unwrap();
        let t = run_server(&c, b.clone(), &d, &idx, 1).unwrap();
        let same = aggregate(&[t.clone(), t.clone(), t.clone()]).unwrap();
        for (a, v) in same.detail().iter().zip(t.coefficients.detail()) {
            assert!((a - v).abs() < 1e-12);
        }
        let mut neg = t.clone();
        neg.coefficients.detail_mut().iter_mut().for_each(|v| *v = -*v);
        let zero = aggregate(&[t.clone(), neg]).unwrap();
        assert!(zero.detail().iter().all(|v| *v == 0.0));
        let mut other = t.clone();
        other.coefficients = MultiresCoefficients::zeros(b.index_set(2).unwrap());
        assert!(matches!(aggregate(&[t, other]), Err(FdpError::Protocol(_))));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn round_matches_transcripts_and_pooled_data() {
        let (b, d) = uniform();
        let c = FederatedConfig::new(5, 7, f64::INFINITY, 9, Mechanism::None).unwrap();
        let p = Protocol::new(c, b.clone()).unwrap();
        let (agg, meta) = p.simulate_round(&d, 0).unwrap();
        assert_eq!(meta.l_star, 6);
        let ts: Vec<_> = (0..5).map(|j| p.run_server(&d, 0, j).unwrap()).collect();
        let brute = aggregate(&ts).unwrap();
        for (a, v) in agg.detail().iter().zip(brute.detail()) {
            assert!((a - v).abs() < 1e-12);
        }
        // pooled data: the mean of server means equals the pooled mean
        let mut pooled = Vec::new();
        for j in 0..5 {
            let mut rng = p.server_rng(0, j);
            pooled.extend(d.sample(7, &mut rng));
        }
        let e = empirical_coefficients(&b, &pooled, p.index_set()).unwrap();
        for (a, v) in agg.detail().iter().zip(e.detail()) {
            assert!((a - v).abs() < 1e-12);
        }
    }

    #[test]
    fn single_server_round_is_its_transcript() {
        let (b, d) = uniform();
        let c = FederatedConfig::new(1, 50, 2.0, 4, Mechanism::OscSurrogate).unwrap();
        let p = Protocol::new(c, b).unwrap();
        let (agg, _) = p.simulate_round(&d, 2).unwrap();
        let t = p.run_server(&d, 2, 0).unwrap();
        assert_eq!(agg.detail(), t.coefficients.detail());
    }

    #[test]
    fn round_is_thread_independent() {
        let (b, d) = uniform();
        let c = FederatedConfig::new(300, 1, 1.0, 4, Mechanism::Laplace).unwrap();
        let p = Protocol::new(c, b).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| p.simulate_round(&d, 0).unwrap().0);
        let c2 = four.install(|| p.simulate_round(&d, 0).unwrap().0);
        assert_eq!(a, c2);
    }
}

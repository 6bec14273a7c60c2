//! Nonparametric density estimation under federated differential privacy.
//!
//! The crate is organised bottom-up:
//!
//! * [`wavelet`]: periodized Haar/Daubechies bases on `[0, 1]`, multiresolution
//!   index sets and coefficient vectors.
//! * [`besov`]: Besov sequence norms and random densities inside Besov balls.
//! * [`lp`]: a small dense revised-simplex solver for l1-minimisation problems.
//! * [`mechanism`]: the multiscale-oscillation norm, its exponential mechanism
//!   (exact hit-and-run and surrogate samplers) and the Laplace baseline.
//! * [`protocol`]: the one-shot federated protocol (servers, transcripts,
//!   aggregation).
//! * [`estimators`]: thresholding estimators and their schedules.
//! * [`risk`]: Monte Carlo risk estimation, theoretical rates and
//!   inequality checks.

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod besov;
pub mod error;
pub mod estimators;
pub mod lp;
pub mod mechanism;
pub mod protocol;
pub mod risk;
pub mod rng;
pub mod stats;
pub mod wavelet;

pub use besov::{BesovClass, DensityModel};
pub use error::{FdpError, Result};
pub use estimators::{BlockPartition, DensityEstimate, EstimatorTag, ThresholdSchedule};
pub use mechanism::{NoiseDraw, NormOracle};
pub use protocol::{FederatedConfig, Mechanism, ServerTranscript};
pub use risk::{RateFit, RiskReport};
pub use wavelet::{Family, MultiresCoefficients, MultiresIndexSet, WaveletBasis};

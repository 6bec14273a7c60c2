//! Configuration-driven experiments over `fdp-core`: config parsing and
//! hashing, artifact writing, experiment runners and the acceptance criteria.

pub mod config;
pub mod criteria;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::{ExperimentConfig, Kind};
pub use error::CliError;

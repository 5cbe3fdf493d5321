//! Configuration-driven experiment runner for nested SMC filters.

pub mod config;
pub mod curves;
pub mod error;
pub mod experiment;
pub mod selftest;

pub use config::{ExperimentConfig, Method};
pub use error::{CliError, CliResult};
pub use experiment::{run_experiment, RunReport};

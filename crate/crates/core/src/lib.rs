//! Nested sequential Monte Carlo for high-dimensional state space models.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: chain Gaussian Markov random fields, linear-Gaussian state
//!   space models, data simulation and the [`model::TargetSequence`] interface.
//! - [`exact`]: Kalman filter and the exact fully adapted particle filter
//!   built on forward filtering / backward sampling over state components.
//! - [`smc`]: log-domain weights, resampling, the bootstrap particle filter.
//! - [`nested`]: proper-weighting inner procedures and the nested SMC filter.
//! - [`diagnostics`]: replicate summaries and unbiasedness tests.
//! - [`asymptotics`]: asymptotic-variance constants and formulas for the
//!   independent-components model.
//! - [`oracle`]: dense-matrix reference computations used for validation.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod asymptotics;
pub mod diagnostics;
pub mod error;
pub mod exact;
pub mod gauss;
pub mod model;
pub mod nested;
pub mod oracle;
pub mod rng;
pub mod smc;

pub use error::{NsmcError, Result};

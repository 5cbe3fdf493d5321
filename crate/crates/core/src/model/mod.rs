//! Sequential probabilistic models.
//!
//! Models are exposed to the filters through [`TargetSequence`], which only
//! ever hands out log-densities. Concrete models are linear-Gaussian with
//! chain-structured noise ([`LinearGaussianSsm`]), compiled from either a
//! spatio-temporal spec or an independent-components spec.

mod dataset;
mod gmrf;
mod lgss;

use rand::Rng;

pub use dataset::{simulate, Dataset, DatasetMeta};
pub use gmrf::{
    chain_backward, chain_forward, chain_precision, sample_gmrf_chain, GaussianChain,
    GaussianMessage, TridiagPrecision,
};
pub use lgss::{IndependentSsmSpec, LinearGaussianSsm, ModelSpec, ScalarLgss, StssmSpec};

/// A Markovian state space model viewed as a sequence of unnormalized targets
/// `γ_t(x_{1:t}) = γ_{t-1}(x_{1:t-1}) f(x_t | x_{t-1}) g(y_t | x_t)`.
///
/// `prev = None` denotes t = 1, where `f` is the initial law.
pub trait TargetSequence: Sync {
    fn n_x(&self) -> usize;

    fn sample_transition<R: Rng + ?Sized>(
        &self,
        prev: Option<&[f64]>,
        rng: &mut R,
        out: &mut [f64],
    );

    fn log_transition(&self, prev: Option<&[f64]>, x: &[f64]) -> f64;

    fn log_observation(&self, x: &[f64], y: &[f64]) -> f64;

    /// `log γ_t(x_{1:t}) / γ_{t-1}(x_{1:t-1})`.
    fn log_incremental(&self, prev: Option<&[f64]>, x: &[f64], y: &[f64]) -> f64 {
        self.log_transition(prev, x) + self.log_observation(x, y)
    }
}

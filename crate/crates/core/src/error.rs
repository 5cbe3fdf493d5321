use thiserror::Error;

/// Errors raised by the models, filters and evaluators in this crate.
#[derive(Debug, Error)]
pub enum NsmcError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Every outer weight (or every τ) vanished at time step `t` (1-based).
    #[error("weight collapse at t = {t}: all particle weights are zero")]
    WeightCollapse { t: usize },

    /// Every weight of an inner sampler vanished at stage `stage` (1-based).
    #[error("inner sampler collapse at stage d = {stage}: all stage weights are zero")]
    InnerCollapse { stage: usize },

    #[error("backward simulation failed at stage d = {stage}: all backward weights are zero")]
    BackwardCollapse { stage: usize },

    #[error("integral for constant {name} at s = {s} diverges")]
    DivergentIntegral { name: &'static str, s: usize },

    #[error("{0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = NsmcError> = std::result::Result<T, E>;

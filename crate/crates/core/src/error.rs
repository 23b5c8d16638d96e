//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by model evaluation, basis construction, assembly and
/// estimation. Sweep drivers treat per-replicate estimation errors as
/// recorded failures, never as fatal conditions.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A state or observation vector contained NaN/inf entries.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// The adaptive integrator could not proceed past `last_good_time`.
    #[error("integration failed at t = {last_good_time}: {reason}")]
    IntegrationFailure { last_good_time: f64, reason: String },

    /// The observation window cannot hold a test-function support.
    #[error("domain too small: support width {support} exceeds window {window}")]
    DomainTooSmall { support: f64, window: f64 },

    /// A weak-form integrand denominator vanished (x1 + 1 near zero).
    #[error("singular denominator at sample {index}: x + 1 = {value}")]
    SingularDenominator { index: usize, value: f64 },

    /// The regression matrix is rank deficient.
    #[error("rank-deficient system: rank {rank} < {ncols} columns; deficient columns {deficient:?}")]
    StructuralDegeneracy {
        rank: usize,
        ncols: usize,
        deficient: Vec<String>,
    },

    /// A parameter covariance diagonal was negative beyond tolerance.
    #[error("invalid covariance: diagonal entry {index} = {value}")]
    CovarianceInvalid { index: usize, value: f64 },

    /// A configuration value is rejected before any computation runs.
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

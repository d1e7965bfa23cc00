//! Error type shared by every module.

use thiserror::Error;

/// Failures raised by the bound, schedule and oracle routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum KmtError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Adaptive quadrature ran out of subdivisions before meeting tolerance.
    #[error("quadrature did not converge: estimate {estimate}, error bound {error_bound}")]
    Quadrature { estimate: f64, error_bound: f64 },

    /// The failure budget is too small to be split across the dyadic levels.
    #[error("budget infeasible: {0}")]
    BudgetInfeasible(String),

    /// A change-point block was queried before its thresholds were computed.
    #[error("block {0} not materialized; materialize first")]
    NotMaterialized(usize),

    /// Inconsistent configuration values.
    #[error("config error: {0}")]
    Config(String),

    /// Input too large for exhaustive enumeration.
    #[error("refused: {0}")]
    TooLarge(String),
}

pub type Result<T> = std::result::Result<T, KmtError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(KmtError::Domain(msg.into()))
}

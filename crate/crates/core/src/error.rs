use thiserror::Error;

/// Errors raised by the library.
///
/// Validation failures (bad shapes, bad parameters, malformed files) are kept
/// apart from numerical failures so front ends can map them to distinct exit
/// codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid variance components: {0}")]
    InvalidVariance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("operands live on different designs")]
    DesignMismatch,

    #[error("operands use different block normalizations")]
    NormMismatch,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("degenerate rank-one update at observation {index}: 1 + tr(W^-1 E) = {denominator}")]
    DegenerateUpdate { index: usize, denominator: f64 },

    #[error("factorization failed: {0}")]
    Factorization(String),
}

impl Error {
    /// True for failures of the arithmetic itself rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_) | Error::DegenerateUpdate { .. } | Error::Factorization(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

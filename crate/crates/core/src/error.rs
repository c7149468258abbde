use thiserror::Error;

/// Errors raised by model evaluation and the verification routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("CGR vector norm {norm} is outside the chart (limit {limit})")]
    ChartExit { norm: f64, limit: f64 },

    #[error("feature {feature} has depth {depth} below the cheirality limit {limit}")]
    Cheirality { feature: usize, depth: f64, limit: f64 },

    #[error("feature index {index} out of range (state has {count} features)")]
    InvalidFeature { index: usize, count: usize },

    #[error("axis index {0} out of range (expected 0, 1 or 2)")]
    InvalidAxis(usize),

    #[error("flattened state of length {0} is not 15 + 3N")]
    BadDimension(usize),

    #[error("jacobian evaluation failed: {0}")]
    JacobianDomain(Box<Error>),

    #[error("derivative nesting depth {requested} exceeds the supported {max}")]
    DepthExceeded { requested: usize, max: usize },

    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn in_jacobian(self) -> Error {
        match self {
            e @ Error::JacobianDomain(_) => e,
            e => Error::JacobianDomain(Box::new(e)),
        }
    }
}

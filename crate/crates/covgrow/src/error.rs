//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    // ---- basis construction and evaluation ----
    #[error("spline order must be at least 2, got {0}")]
    OrderTooSmall(usize),

    #[error("domain lower bound {0} is not below upper bound {1}")]
    InvalidDomain(String, String),

    #[error("interior knots must be strictly increasing")]
    KnotsNotIncreasing,

    #[error("interior knot {0} lies outside the open domain ({1}, {2})")]
    KnotOutsideDomain(String, String, String),

    #[error("evaluation point {0} is outside the domain [{1}, {2}]")]
    OutOfDomain(String, String, String),

    #[error("derivative order {deriv} must be below the spline order {order}")]
    DerivTooHigh { deriv: usize, order: usize },

    #[error("penalty derivative order {gamma} must satisfy 2 <= gamma <= {max}")]
    GammaOutOfRange { gamma: usize, max: usize },

    #[error("linear boundary constraint is not available for this basis: {0}")]
    BoundaryConstraint(String),

    // ---- data and model ----
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("individual {id}: {detail}")]
    InvalidIndividual { id: String, detail: String },

    #[error("covariate column `{0}` not found")]
    UnknownCovariate(String),

    #[error("covariate `{0}` must be strictly positive for a log term")]
    LogRequiresPositive(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("model is not identifiable: {0}")]
    Unidentifiable(String),

    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: String },

    // ---- smoothing selection ----
    #[error("smoothing vector has {got} entries, expected {expected}")]
    LambdaCount { got: usize, expected: usize },

    #[error("smoothing parameters must be nonnegative, got {0}")]
    NegativeLambda(String),

    #[error(
        "influence trace {trace} is not below the observation count {n}; \
         the unpenalized model is overparameterized"
    )]
    GcvDegenerate { trace: String, n: usize },

    #[error("variance estimate denominator N_T - tr A(0) = {0} is not positive")]
    SigmaDenominator(String),

    #[error("sigma^2 must be positive, got {0}")]
    InvalidSigma(String),

    #[error("smoothing selection did not converge within {0} iterations")]
    SelectionDidNotConverge(usize),

    // ---- uniform-design solver ----
    #[error("temporal design is not uniform across individuals")]
    NotUniform,

    // ---- files and CLI ----
    #[error("{path}:{line}: {detail}")]
    FileFormat {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("usage: {0}")]
    Usage(String),
}

impl Error {
    /// Process exit code for the CLI: 2 for input problems, 3 for singular
    /// or unidentifiable systems, 4 for selection that failed to converge.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Unidentifiable(_) | Error::NotPositiveDefinite { .. } => 3,
            Error::SelectionDidNotConverge(_) => 4,
            _ => 2,
        }
    }
}

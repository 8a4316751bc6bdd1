use thiserror::Error;

/// Errors raised by model construction, fitting and inference.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid spline domain [{lo}, {hi}]: endpoints must be finite with lo < hi")]
    InvalidDomain { lo: f64, hi: f64 },

    #[error("interior knots must be strictly increasing and lie inside ({lo}, {hi})")]
    InvalidKnots { lo: f64, hi: f64 },

    #[error("integration limits must be finite with lo <= hi (got [{lo}, {hi}])")]
    InvalidLimits { lo: f64, hi: f64 },

    #[error("observation {index}: {reason}")]
    InvalidObservation { index: usize, reason: String },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty dataset")]
    EmptyData,

    #[error(
        "naive least-squares design is singular; check for constant, duplicated or \
         collinear covariate columns"
    )]
    SingularDesign,

    #[error("need more than {needed} uncensored observations for the initial fit, found {found}")]
    TooFewEvents { needed: usize, found: usize },

    #[error("likelihood evaluation failed: {0}")]
    Evaluation(#[from] EvalError),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("every candidate knot count failed during cross-validation")]
    AllCandidatesFailed,
}

/// Failure of a single likelihood evaluation. The optimizer treats these as a
/// log-likelihood of negative infinity.
#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum EvalError {
    #[error("log-hazard exceeded the exponent cap")]
    Overflow,
    #[error("non-finite log-likelihood")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, Error>;

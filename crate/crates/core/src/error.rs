use thiserror::Error;

/// Errors surfaced by the design, realization and estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate denominator: {0}")]
    DegenerateDenominator(String),

    #[error("non-causal filter: denominator has zero constant term")]
    NonCausalFilter,

    #[error("variance undefined: filter is not stable")]
    VarianceUndefined,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-invertible plant at stability margin (|b| = 1)")]
    StabilityMargin,

    #[error("zero plant gain (k1 = 0)")]
    ZeroPlantGain,

    #[error("cost not locally convex: Hessian eigenvalue {0:.3e}")]
    NotLocallyConvex(f64),

    #[error("wrong regime: {0}")]
    WrongRegime(String),

    #[error("internal consistency: {0}")]
    Inconsistency(String),

    #[error("order mismatch: moment order {order} < numerator degree {degree}")]
    OrderMismatch { order: usize, degree: usize },

    #[error("invalid moment matrix: {0}")]
    InvalidMomentMatrix(String),

    #[error("degenerate null vector, no causal controller")]
    DegenerateNullVector,

    #[error("unstable realization filter: {0}")]
    UnstableRealization(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("infeasible design: {0}")]
    Infeasible(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

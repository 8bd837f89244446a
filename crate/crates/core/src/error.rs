use thiserror::Error;

/// Errors produced by the factorization library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("leading coefficient is numerically zero (|c_d| = {lead:e}, max |c| = {max:e})")]
    DegenerateLeadingCoefficient { lead: f64, max: f64 },

    #[error("grid interval [{grid_min}, {grid_max}] does not match model interval [{model_min}, {model_max}]")]
    IntervalMismatch {
        grid_min: f64,
        grid_max: f64,
        model_min: f64,
        model_max: f64,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("odd degree {0} requested; only even numerator/denominator degrees are supported")]
    OddDegree(usize),

    #[error("models do not share degrees and interval")]
    DegreeMismatch,

    #[error("exhaustive subset enumeration refused for r = {0} > 20")]
    SubsetExplosion(usize),

    #[error("residual or Jacobian is not finite at the initial point")]
    NonFiniteResidual,

    #[error("active-set solver exceeded {0} iterations")]
    MaxIterations(usize),

    #[error("constraint set is infeasible")]
    Infeasible,

    #[error("phase-1 linear program is unbounded")]
    Unbounded,

    #[error("scaled basis matrix is rank deficient (sigma_min/sigma_max = {0:e})")]
    RankDeficientV1(f64),

    #[error("no feasible bracket found for the infinity-norm bisection")]
    InfeasibleAtUmax,

    #[error("column {0} has zero norm")]
    ZeroNormColumn(usize),

    #[error("current error is zero")]
    ZeroError,

    #[error("reference matrix has zero norm")]
    ZeroReference,

    #[error("signal has zero norm")]
    ZeroSignal,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("malformed CSV: {0}")]
    MalformedCsv(String),

    #[error("discretization points are not strictly increasing (row {0})")]
    NonMonotoneTau(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("rate graph is not strongly connected")]
    NotIrreducible,
    #[error("linear solve failed: {0}")]
    SolverFailure(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("distribution is not strictly positive: state {state} has weight {value:e}")]
    NonPositiveDistribution { state: usize, value: f64 },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },
    #[error("observable does not have zero stationary mean (mean {0:e})")]
    NonZeroMean(f64),
    #[error("rates violate detailed balance on pair ({x}, {y}): defect {defect:e}")]
    NotDetailedBalance { x: usize, y: usize, defect: f64 },
    #[error("support violation: state {state} carries mass outside the reference support")]
    SupportViolation { state: usize },
    #[error("integrator failure: {0}")]
    IntegratorFailure(String),
    #[error("trace has {0} rows, at least 3 are required")]
    InsufficientTrace(usize),
    #[error("eigenvalue computation failed: {0}")]
    EigenFailure(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate sample: effective sample size {ess:.2} < 10")]
    DegenerateSample { ess: f64 },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
}

impl Error {
    /// Whether the failure is a problem with the inputs (as opposed to a numerical one).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::NotIrreducible
                | Error::DimensionMismatch { .. }
                | Error::NonPositiveDistribution { .. }
                | Error::InvalidDistribution(_)
                | Error::NonZeroMean(_)
                | Error::NotDetailedBalance { .. }
                | Error::SupportViolation { .. }
                | Error::InsufficientTrace(_)
                | Error::InvalidParameter(_)
                | Error::Parse { .. }
                | Error::Validation(_)
        )
    }

    /// Stable short identifier, used in CLI diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NotIrreducible => "E_NOT_IRREDUCIBLE",
            Error::SolverFailure(_) => "E_SOLVER",
            Error::DimensionMismatch { .. } => "E_DIMENSION",
            Error::NonPositiveDistribution { .. } => "E_NON_POSITIVE",
            Error::InvalidDistribution(_) => "E_DISTRIBUTION",
            Error::ConvergenceFailure { .. } => "E_CONVERGENCE",
            Error::NonZeroMean(_) => "E_NON_ZERO_MEAN",
            Error::NotDetailedBalance { .. } => "E_NOT_DETAILED_BALANCE",
            Error::SupportViolation { .. } => "E_SUPPORT",
            Error::IntegratorFailure(_) => "E_INTEGRATOR",
            Error::InsufficientTrace(_) => "E_TRACE",
            Error::EigenFailure(_) => "E_EIGEN",
            Error::InvalidParameter(_) => "E_PARAMETER",
            Error::DegenerateSample { .. } => "E_DEGENERATE_SAMPLE",
            Error::Parse { .. } => "E_PARSE",
            Error::Validation(_) => "E_VALIDATION",
        }
    }
}

use thiserror::Error;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// The request is well formed but no filter (or certificate) exists.
    Infeasible,
    /// Malformed or inconsistent input.
    Input,
    /// A numerical routine failed.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("equilibrium residual {residual:e} exceeds tolerance {tolerance:e}")]
    EquilibriumResidual { residual: f64, tolerance: f64 },

    #[error("fault is not detectable: rank [H F] equals rank H at {agreeing} of {points} test points")]
    NotDetectable { agreeing: usize, points: usize },

    #[error("all {branches} branch programs are infeasible")]
    AllBranchesInfeasible { branches: usize },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eig:e}, norm {norm:e})")]
    NonPsdInput { min_eig: f64, norm: f64 },

    #[error("denominator polynomial is not stable (largest root real part {max_real:e})")]
    UnstableDenominator { max_real: f64 },

    #[error("improper filter: numerator degree {numerator} exceeds denominator degree {denominator}")]
    Improper { numerator: usize, denominator: usize },

    #[error("payoff {0} is not supported by this program")]
    UnsupportedPayoff(String),

    #[error("{have} scenarios supplied but the chance certificate needs {required}")]
    InsufficientScenarios { have: usize, required: u64 },

    #[error("conic solver failed: {0}")]
    Solver(String),

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("Newton iteration stalled after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("simulation diverged at t = {time}")]
    Divergence { time: f64, samples_kept: usize },

    #[error("step {dt} is too coarse for fastest mode {fastest:e} rad/s")]
    Stiff { dt: f64, fastest: f64 },

    #[error("residual trace is identically zero")]
    ZeroResidual,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NotDetectable { .. } | Error::AllBranchesInfeasible { .. } => ErrorClass::Infeasible,
            Error::InsufficientScenarios { .. }
            | Error::Dimension(_)
            | Error::InvalidArgument(_)
            | Error::NonPsdInput { .. }
            | Error::UnstableDenominator { .. }
            | Error::Improper { .. }
            | Error::UnsupportedPayoff(_)
            | Error::EquilibriumResidual { .. }
            | Error::Parse(_)
            | Error::Io(_)
            | Error::Json(_) => ErrorClass::Input,
            Error::NonFinite(_)
            | Error::Solver(_)
            | Error::Singular(_)
            | Error::NonConvergence { .. }
            | Error::Divergence { .. }
            | Error::Stiff { .. }
            | Error::ZeroResidual => ErrorClass::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

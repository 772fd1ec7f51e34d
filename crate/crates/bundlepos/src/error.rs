use thiserror::Error;

use crate::tensor::Mode;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("metric is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NonPositiveMetric { min_eigenvalue: f64 },
    #[error("hermitian symmetry violated: relative deviation {deviation:e}")]
    SymmetryViolation { deviation: f64 },
    #[error("Griffiths minimization did not stabilize; best value {best:e}")]
    NonConvergence { best: f64 },
    #[error("tensor is not {mode}-positive (margin {margin:e})")]
    NotPositive { mode: Mode, margin: f64 },
    #[error("sphere integral diverges: det A(v) = {min_det:e} with s = {s} >= r - 1")]
    DivergentIntegral { min_det: f64, s: f64 },
    #[error("no twist t <= {t_max} makes the tensor {mode}-positive")]
    NoPositiveTwist { mode: Mode, t_max: f64 },
    #[error("bundle trace is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NonPositiveTrace { min_eigenvalue: f64 },
    #[error("{mode} margin is not monotone in the twist parameter near t = {t}")]
    NonMonotoneMargin { mode: Mode, t: f64 },
    #[error("{mode}-positivity fails at {} node(s), first {:?}", nodes.len(), nodes.first())]
    NotPositiveSomewhere { mode: Mode, nodes: Vec<usize> },
    #[error("covector must be nonzero")]
    ZeroCovector,
    #[error("Newton iteration diverged at t = {t} (residual {residual:e})")]
    NewtonDiverged { t: f64, residual: f64 },
    #[error("positivity lost at t = {t}: {mode} margin {margin:e} at node {node}")]
    PositivityLost {
        t: f64,
        mode: Mode,
        margin: f64,
        node: usize,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the calibration toolkit.
///
/// Every variant names the subsystem that raised it so the CLI can report
/// where a numerical failure originated.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{module}: invalid argument: {message}")]
    InvalidArgument { module: &'static str, message: String },

    #[error("{module}: numerical failure: {message}")]
    NumericalFailure { module: &'static str, message: String },

    #[error("gp-kronecker: conjugate gradients did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("{module}: invalid state: {message}")]
    State { module: &'static str, message: String },

    #[error("calibration: estimated distortion {magnitude:.3e} at (f={f}, n={n}) is too small to invert")]
    DegenerateDistortion { f: usize, n: usize, magnitude: f64 },

    #[error("metrics: ground truth is constant, NRMSE normalisation is undefined")]
    DegenerateNormalization,
}

impl Error {
    pub(crate) fn invalid(module: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidArgument { module, message: message.into() }
    }

    pub(crate) fn numerical(module: &'static str, message: impl Into<String>) -> Self {
        Error::NumericalFailure { module, message: message.into() }
    }

    /// True for errors caused by bad inputs rather than by the numerics.
    pub fn is_invalid_argument(&self) -> bool {
        matches!(self, Error::InvalidArgument { .. })
    }
}

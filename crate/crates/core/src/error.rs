//! Error type shared by every module.

use thiserror::Error;

/// Failures reported by the library and the command-line front end.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("singular matrix: |det| = {det:e} is below the tolerance {tol:e}")]
    SingularMatrix { det: f64, tol: f64 },
    #[error("singular quadratic form: pivot magnitude {pivot:e} is below tolerance")]
    SingularForm { pivot: f64 },
    #[error("divergent Gaussian integral: pivot has Im = {im:e} < 0")]
    NonIntegrable { im: f64 },
    #[error("form is not normalizable: smallest eigenvalue of Im M is {min_eig:e}")]
    NonNormalizable { min_eig: f64 },
    #[error("duration must be positive, got {0:e}")]
    NonpositiveDuration(f64),
    #[error("regime violation: {0}")]
    RegimeViolation(String),
    #[error("integration step diverged at t = {0:e}")]
    StepDiverged(f64),
    #[error("support escaped the grid: retained norm fraction {0}")]
    SupportEscapedGrid(f64),
    #[error("invalid count {0}: at least 2 required")]
    InvalidCount(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("sampling density is numerically zero on the window")]
    SamplingDegenerate,
    #[error("fit failed: {0}")]
    FitFailed(String),
    #[error("zero counts in detector {0}")]
    ZeroCounts(String),
    #[error("too few pulses: got {got}, need at least {need}")]
    TooFewPulses { got: usize, need: usize },
    #[error("I/O failure: {0}")]
    Io(String),
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 for configuration errors, 4 for I/O, 3 for numerics.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigInvalid(_) | Error::InvalidParameter(_) | Error::InvalidCount(_) => 2,
            Error::Io(_) => 4,
            _ => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn require_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

pub(crate) fn require_duration(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::NonpositiveDuration(t))
    }
}

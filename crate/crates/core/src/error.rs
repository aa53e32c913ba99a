use thiserror::Error;

/// Errors raised across the library and the command-line surface.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its mathematical domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Samples cannot support the requested fit (too few, zero spread).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// The discretization grid does not hold enough of the distribution's mass.
    #[error("grid [{lo}, {hi}] captures only {mass:.6} of the probability mass")]
    GridTooNarrow { lo: f64, hi: f64, mass: f64 },

    /// Two objects that must share a grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    /// The quadrature grid does not cover the support it must integrate over.
    #[error("evaluation grid does not cover [{need_lo}, {need_hi}]")]
    Coverage { need_lo: f64, need_hi: f64 },

    /// A computation produced a non-finite intermediate.
    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    /// Gradient descent produced a non-finite iterate.
    #[error("optimizer diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    /// Malformed or unsupported file contents.
    #[error("format error: {0}")]
    Format(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse error classes mapped onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Validation,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 1,
            ErrorClass::Validation => 2,
            ErrorClass::Numerical => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Usage => "usage",
            ErrorClass::Validation => "validation",
            ErrorClass::Numerical => "numerical",
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Usage(_) => ErrorClass::Usage,
            Error::Coverage { .. } | Error::NumericalDomain(_) | Error::Diverged { .. } => {
                ErrorClass::Numerical
            }
            _ => ErrorClass::Validation,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite, got {value}")))
    }
}

pub(crate) fn ensure_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {value}")))
    }
}

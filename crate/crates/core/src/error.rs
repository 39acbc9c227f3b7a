use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    /// An argument lies outside the domain on which the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A user-supplied function returned NaN or an infinity.
    #[error("non-finite value {value} produced by {source_name} at {location}")]
    NonFinite {
        value: f64,
        source_name: String,
        location: String,
    },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    /// A Monte Carlo estimator failed one of its self-diagnostics.
    #[error("estimator diagnostic failed: {0}")]
    Diagnostic(String),

    /// A series could not be certified as convergent at the requested truncation.
    #[error("series not certified: {0}")]
    Divergent(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

impl From<std::io::Error> for LabError {
    fn from(err: std::io::Error) -> Self {
        LabError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(LabError::Domain(format!(
            "{name} must be finite, got {value}"
        )))
    }
}

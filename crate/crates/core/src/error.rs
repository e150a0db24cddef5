use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OveremError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension error: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("index {index} out of range for {len} components")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("iterates diverged at step {step}: norm {norm} exceeds guard {guard}")]
    Diverged { step: usize, norm: f64, guard: f64 },

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),
}

pub type Result<T> = std::result::Result<T, OveremError>;

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(OveremError::Domain(format!("{what} contains a non-finite value")))
    }
}

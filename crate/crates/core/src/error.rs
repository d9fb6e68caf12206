use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes shared by every estimator in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate measure: {0}")]
    DegenerateMeasure(String),

    #[error("unsupported measure: {0}")]
    UnsupportedMeasure(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "I_q with q = {q} in dimension {dim} has unbounded estimator variance (q <= -n/2); \
         use the section formula (I_negk_via_sections) instead"
    )]
    VarianceRefusal { q: f64, dim: usize },

    #[error("volume brackets are limited to dimension <= {max}, got {dim}")]
    ScaleRefusal { dim: usize, max: usize },

    #[error("outside the domain of the log-Laplace transform: {0}")]
    LaplaceDomain(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

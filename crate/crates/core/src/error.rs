use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("kernel singularity at the origin")]
    Singularity,

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("index {index} out of range (count {count})")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numerical blow-up at step {step}, realization {realization}, marker {marker}")]
    BlowUp {
        step: usize,
        realization: u64,
        marker: usize,
    },

    #[error("no contraction after {iterations} Picard iterations (last distance {last})")]
    NoConvergence {
        iterations: usize,
        last: f64,
        trace: Vec<f64>,
    },

    #[error("inverse flow did not converge (residual {residual:e})")]
    Inversion { residual: f64 },

    #[error("seed mismatch: {0}")]
    SeedMismatch(String),

    #[error("too few samples for regression: {0}")]
    TooFewSamples(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

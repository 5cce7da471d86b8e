use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("frame {frame}: {active} active speakers exceed max overlap {max_overlap} (mask {mask:#b})")]
    Cardinality {
        frame: usize,
        mask: u32,
        active: u32,
        max_overlap: u32,
    },

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at step {step} (batch {batch:?})")]
    NonFiniteLoss { step: usize, batch: Vec<usize> },

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("corpus generation failed: overlap ratio {achieved:.4} outside [{lo:.4}, {hi:.4}] after {retries} retries")]
    Generation {
        achieved: f64,
        lo: f64,
        hi: f64,
        retries: usize,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

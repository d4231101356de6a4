use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backward root must be scalar (shape [1]), got {0:?}")]
    InvalidRoot(Vec<usize>),

    #[error("unknown node {0}")]
    UnknownNode(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("encode error: {0}")]
    Encode(String),

    #[error("ingestion error at row {row}: {reason}")]
    Ingestion { row: usize, reason: String },

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("metric input error: {0}")]
    MetricInput(String),

    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    #[error("evaluation error for sample {id}: {reason}")]
    Evaluation { id: String, reason: String },

    #[error("training diverged (non-finite loss {loss}) at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{} fold(s) failed: {}", .0.len(), .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    FoldsFailed(Vec<Error>),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("synthesis error: {0}")]
    Synth(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn mismatch(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

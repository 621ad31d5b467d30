use std::path::PathBuf;

/// Errors produced anywhere in the pretraining / evaluation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("degenerate batch for batch norm: {count} values per channel (need at least 2)")]
    DegenerateBatch { count: usize },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("degenerate embedding: {side} row {row} has zero norm")]
    DegenerateEmbedding { side: &'static str, row: usize },

    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported storage format `{0}`")]
    UnsupportedFormat(String),

    #[error("truncated signal: expected {expected} bytes, found {found} (data ends at offset {found})")]
    TruncatedSignal { expected: usize, found: usize },

    #[error("cannot load {path}: {source}")]
    Load {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest error at line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("missing embedding for prompt {0:?}")]
    MissingEmbedding(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss in batch {batch_ids:?}")]
    NonFiniteLoss { batch_ids: Vec<String> },

    #[error("frozen text provider changed during training")]
    ProviderMutated,

    #[error("labels not in catalog: {0:?}")]
    UnknownLabels(Vec<String>),

    #[error("empty text cannot be templated")]
    EmptyText,

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("duplicate prompt {0:?}")]
    DuplicatePrompt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn load(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Load {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

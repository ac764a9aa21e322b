use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("mesh has no edges")]
    NoEdges,

    #[error("knn: requested k={k} but only {available} points are indexed")]
    KTooLarge { k: usize, available: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("backward: root must be a 1x1 tensor, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("dqs: blended rotation vanished at vertex {vertex} (antipodal cancellation)")]
    DegenerateBlend { vertex: usize },

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("invalid skin weights: {0}")]
    InvalidWeights(String),

    #[error("parameter `{name}` = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("condition vector has length {got}, model expects {expected}")]
    ConditionLength { expected: usize, got: usize },

    #[error("vertex count mismatch: {0} vs {1}")]
    CountMismatch(usize, usize),

    #[error("face lists differ")]
    FaceMismatch,

    #[error("ground truth has zero norm")]
    ZeroNorm,

    #[error("{0}")]
    Format(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training diverged at step {step}: loss is not finite")]
    NonFiniteLoss { step: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("invalid depth {0}: octree depth must be at least 1")]
    InvalidDepth(usize),

    #[error("layer {layer} out of range 1..={depth}")]
    LayerOutOfRange { layer: usize, depth: usize },

    #[error("kernel geometry violates the asymmetry conditions: {0}")]
    IllegalKernel(String),

    #[error("invalid kernel geometry: {0}")]
    InvalidGeometry(String),

    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backward called before forward")]
    NoForwardCache,

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("parse error in {}:{line}: {msg}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint does not match configuration: {0}")]
    CheckpointMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

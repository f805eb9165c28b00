use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid probability distribution at row {row}: {detail}")]
    InvalidDistribution { row: usize, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward called on a tensor that does not require grad")]
    Detached,

    #[error("{context}: bad magic, not a {expected} file")]
    Format { context: String, expected: &'static str },

    #[error("{context}: unsupported version {found} (expected {expected})")]
    Version { context: String, found: u32, expected: u32 },

    #[error("{context}: file truncated")]
    Truncated { context: String },

    #[error("{context}: {detail}")]
    Corrupt { context: String, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },

    #[error("teacher failed quality gate: validation loss {measured:.6} exceeds bound {bound:.6}")]
    TeacherQuality { measured: f64, bound: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier, used for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InvalidDistribution { .. } => "invalid_distribution",
            Error::NonScalarLoss(_) => "non_scalar_loss",
            Error::Detached => "detached",
            Error::Format { .. } => "format",
            Error::Version { .. } => "version",
            Error::Truncated { .. } => "truncated",
            Error::Corrupt { .. } => "corrupt",
            Error::Config(_) => "config",
            Error::Divergence { .. } => "divergence",
            Error::TeacherQuality { .. } => "teacher_quality",
            Error::Io { .. } => "io",
        }
    }
}

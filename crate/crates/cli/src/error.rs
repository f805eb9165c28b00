use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("line {line}: {detail}")]
    Syntax { line: usize, detail: String },

    #[error("unknown section [{section}]{}", at_line(*.line))]
    UnknownSection { section: String, line: usize },

    #[error("unknown key {key}{}", at_line(*.line))]
    UnknownKey { key: String, line: usize },

    #[error("missing required {0}")]
    MissingKey(String),

    #[error("{key}: expected {expected}, got {value:?}")]
    Type {
        key: String,
        value: String,
        expected: &'static str,
    },

    #[error("{key}: {detail}")]
    Invalid { key: String, detail: String },

    #[error("{what} not found at {path} (run `{producer}` first)")]
    MissingArtifact {
        what: &'static str,
        path: PathBuf,
        producer: &'static str,
    },

    #[error("{0}")]
    EmptyGrid(String),

    #[error("{path}: missing column {column:?}")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: {detail}")]
    Csv { path: PathBuf, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] softdistill_core::Error),
}

fn at_line(line: usize) -> String {
    if line == 0 {
        " (from --set)".to_string()
    } else {
        format!(" at line {line}")
    }
}

impl CliError {
    pub(crate) fn syntax(line: usize, detail: impl Into<String>) -> Self {
        CliError::Syntax {
            line,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        CliError::Csv {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Short stable identifier printed in the one-line error report.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Syntax { .. } => "config_syntax",
            CliError::UnknownSection { .. } => "config_unknown_section",
            CliError::UnknownKey { .. } => "config_unknown_key",
            CliError::MissingKey(_) => "config_missing_key",
            CliError::Type { .. } => "config_type",
            CliError::Invalid { .. } => "config_invalid",
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::EmptyGrid(_) => "empty_grid",
            CliError::MissingColumn { .. } => "missing_column",
            CliError::Csv { .. } => "csv",
            CliError::Io { .. } => "io",
            CliError::Core(e) => e.kind(),
        }
    }

    /// Process exit status: 2 for usage and configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_)
            | CliError::Syntax { .. }
            | CliError::UnknownSection { .. }
            | CliError::UnknownKey { .. }
            | CliError::MissingKey(_)
            | CliError::Type { .. }
            | CliError::Invalid { .. } => 2,
            CliError::Core(softdistill_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

/// `error kind=<kind> message=<message>` with the message flattened onto one line.
pub fn error_line(kind: &str, message: &str) -> String {
    let flat: Vec<&str> = message.split_whitespace().collect();
    format!("error kind={kind} message={}", flat.join(" "))
}

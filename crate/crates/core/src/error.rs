use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("training diverged at epoch {epoch} (mean loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("stale domain model: fitted against model {expected:016x}, got {found:016x}")]
    StaleDomainModel { expected: u64, found: u64 },

    #[error("unknown {kind} label `{label}`{}", format_suggestions(.suggestions))]
    UnknownLabel {
        kind: &'static str,
        label: String,
        suggestions: Vec<String>,
    },
}

fn format_suggestions(suggestions: &[String]) -> String {
    if suggestions.is_empty() {
        String::new()
    } else {
        format!("; did you mean: {}", suggestions.join(", "))
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::DimensionMismatch { .. }
            | Error::StaleDomainModel { .. }
            | Error::UnknownLabel { .. } => 1,
            Error::Io { .. } | Error::Parse { .. } | Error::Format(_) | Error::EmptyInput(_) => 2,
            Error::Diverged { .. } => 3,
        }
    }
}

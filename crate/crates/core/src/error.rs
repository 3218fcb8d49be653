use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DiscoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DiscoError {
    /// Malformed input file content.
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    /// A caller violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Gold and predicted token streams diverge.
    #[error("alignment error at token {position}: gold {gold:?} vs predicted {pred:?}")]
    Alignment {
        position: usize,
        gold: String,
        pred: String,
    },

    #[error("annotator error: {0}")]
    Annotator(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl DiscoError {
    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        DiscoError::Format {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn contract(message: impl Into<String>) -> Self {
        DiscoError::Contract(message.into())
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        DiscoError::Config(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DiscoError::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| DiscoError::io(path, e))
}

pub(crate) fn write_string(path: &std::path::Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| DiscoError::io(parent, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| DiscoError::io(path, e))
}

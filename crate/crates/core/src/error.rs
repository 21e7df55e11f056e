use std::path::PathBuf;

/// Errors raised across the crate.
///
/// The CLI maps each variant onto an exit-code category, see [`Error::category`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The utterance is too short for the requested operation; callers skip it.
    #[error("skipped: {0}")]
    Skip(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Short machine-parsable category used in CLI error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::InvalidConfig(_) => "invalid-config",
            Error::Shape(_) => "shape",
            Error::Skip(_) => "skip",
            Error::Parse { .. } => "parse",
            Error::MissingFile(_) => "missing-file",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => "missing-file",
            Error::Io(_) => "io",
            Error::Tensor(_) => "tensor",
            Error::Wav(_) => "wav",
            Error::Json(_) => "json",
            Error::Image(_) => "image",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}

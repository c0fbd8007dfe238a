use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or hyperparameters that cannot be combined.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API called outside its contract (e.g. seed tensor not on tape).
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed or unreadable weight file.
    #[error("weights error: {0}")]
    Weights(String),

    /// Malformed or unreadable image data.
    #[error("image error: {0}")]
    Image(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
    pub fn weights(msg: impl Into<String>) -> Self {
        Error::Weights(msg.into())
    }
    pub fn image(msg: impl Into<String>) -> Self {
        Error::Image(msg.into())
    }
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

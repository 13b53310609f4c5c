use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("balance error: class {class} has no samples")]
    Balance { class: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("mapping error: unknown layers {0:?}")]
    Mapping(Vec<String>),

    #[error("construction error: {0}")]
    Construction(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training error at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("split error: {0}")]
    Split(String),

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

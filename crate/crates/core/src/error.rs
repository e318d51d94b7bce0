use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing resource {}: {reason}", path.display())]
    MissingResource { path: PathBuf, reason: String },
    #[error("load error in {}: {reason}", path.display())]
    Load { path: PathBuf, reason: String },
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Nn(#[from] poster_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn load(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn missing(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::MissingResource {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for the CLI: 2 invalid input, 3 missing resource, 4 stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Config(_) | Error::Json(_) => 2,
            Error::MissingResource { .. } | Error::Load { .. } => 3,
            Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 3,
            Error::Stage { source, .. } => match source.exit_code() {
                2 => 2,
                3 => 3,
                _ => 4,
            },
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Attaches a pipeline stage name to an error.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Into<Error>> StageContext<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e.into()),
        })
    }
}

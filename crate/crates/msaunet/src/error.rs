use std::path::PathBuf;

/// Exit code for configuration, dataset and IO failures.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for a numerical abort during training.
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] msaunet_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("image {}: {message}", path.display())]
    Image { path: PathBuf, message: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("corrupt checkpoint header: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint tensor `{name}` has shape {found:?}, model expects {expected:?}")]
    CheckpointShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint does not match the model: {0}")]
    CheckpointMismatch(String),
    #[error("non-finite {component} at epoch {epoch}, step {step}")]
    NonFinite {
        component: &'static str,
        epoch: usize,
        step: usize,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what} in {path}: {detail}")]
    Format {
        what: &'static str,
        path: PathBuf,
        detail: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("mask is not binary: {count} pixel(s) outside {{0, 1}}")]
    NonBinaryMask { count: usize },

    #[error("scene generation failed: could not place vehicle {placed} of {requested} within {attempts} attempts")]
    PlacementFailed {
        placed: usize,
        requested: usize,
        attempts: usize,
    },

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("output directory {0} already exists (pass --force to replace it)")]
    OutputExists(PathBuf),

    #[error("{failed} of {total} experiment cell(s) failed to train")]
    CellsFailed { failed: usize, total: usize },

    #[error("missing input: expected {what} at {path}")]
    MissingInput {
        what: &'static str,
        path: PathBuf,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for usage errors, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config { .. } => 2,
            _ => 1,
        }
    }
}

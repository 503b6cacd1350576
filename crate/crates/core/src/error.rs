use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Bad configuration or arguments.
    #[error("configuration error: {0}")]
    Config(String),

    /// The input data cannot support the requested operation.
    #[error("data error: {0}")]
    Data(String),

    /// A persisted artifact does not match what the reader expects.
    #[error("format error: {0}")]
    Format(String),

    /// Training diverged or produced non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("stage `{stage}` failed for strategy {strategy}: {source}")]
    Stage {
        stage: &'static str,
        strategy: u32,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str, strategy: u32) -> Self {
        Error::Stage {
            stage,
            strategy,
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Io { .. }
            | Error::Json(_)
            | Error::Data(_)
            | Error::Format(_)
            | Error::Numerical(_) => 2,
            Error::Invariant(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}

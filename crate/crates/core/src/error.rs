use std::path::PathBuf;

/// Errors raised anywhere in the analysis pipeline.
///
/// Each variant maps onto one process exit code (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{}: empty input", .0.display())]
    EmptyInput(PathBuf),
    #[error("config error: {0}")]
    Config(String),
    #[error("data integrity error: {0}")]
    Integrity(String),
    #[error("{model} training diverged at epoch {epoch}: non-finite parameter")]
    Divergence { model: &'static str, epoch: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// 1 usage/config, 2 data, 3 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Divergence { .. } => 3,
            Error::Parse { .. }
            | Error::EmptyInput(_)
            | Error::Integrity(_)
            | Error::Checkpoint(_)
            | Error::Io { .. } => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

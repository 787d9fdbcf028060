use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("{}:{line}: {message}", path.display())]
    DataLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite loss at step {step} (task {task}, lr {lr:e})")]
    NonFiniteLoss { step: usize, task: String, lr: f64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data_line(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Error {
        Error::DataLine {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 model.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io { .. } => 2,
            Error::DataLine { .. } | Error::Data(_) => 3,
            Error::Model(_)
            | Error::Shape(_)
            | Error::Contract(_)
            | Error::NonFiniteLoss { .. } => 4,
        }
    }
}

use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("integrity error at line {line}: {msg}")]
    Integrity { line: usize, msg: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("non-finite {term} loss")]
    Numeric { term: &'static str },

    #[error("training diverged at epoch {epoch}, batch {batch}: {msg}")]
    Training {
        epoch: usize,
        batch: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! shape_check {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::Error::Shape(format!($($arg)*)));
        }
    };
}
pub(crate) use shape_check;

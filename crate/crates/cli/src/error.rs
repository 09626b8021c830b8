use std::fmt;

/// Failures mapped onto the process exit-code contract.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or input data.
    Config(String),
    Io(String),
    /// The run finished without converging; a best-effort result was
    /// already written.
    NotConverged(String),
    /// Checkpoint and configuration disagree.
    Incompatible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::NotConverged(_) => 4,
            CliError::Incompatible(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::NotConverged(m) => write!(f, "did not converge: {m}"),
            CliError::Incompatible(m) => write!(f, "incompatible checkpoint: {m}"),
        }
    }
}

impl From<piacn::Error> for CliError {
    fn from(e: piacn::Error) -> Self {
        match e {
            piacn::Error::Io { .. } => CliError::Io(e.to_string()),
            piacn::Error::Training { .. } => CliError::NotConverged(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

pub fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

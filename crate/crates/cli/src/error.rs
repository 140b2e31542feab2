use std::fmt;

/// Failure of a command, classified by process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag combinations. Exit code 1.
    Usage(String),
    /// Unreadable, corrupt or unsuitable input or output. Exit code 2.
    Data(String),
    /// A contracted invariant did not hold. Exit code 3.
    Internal(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<sstrace::Error> for CliError {
    fn from(e: sstrace::Error) -> Self {
        use sstrace::Error as E;
        match e {
            E::Config(_) | E::Domain(_) => CliError::Usage(e.to_string()),
            E::Shape { .. } => CliError::Internal(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Attaches a path to an I/O-style failure.
pub trait Context<T> {
    fn at(self, what: &std::path::Path) -> CliResult<T>;
}

impl<T, E: fmt::Display> Context<T> for Result<T, E> {
    fn at(self, what: &std::path::Path) -> CliResult<T> {
        self.map_err(|e| CliError::Data(format!("{}: {e}", what.display())))
    }
}

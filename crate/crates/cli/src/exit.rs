//! Errors carrying the process exit code.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | I/O failure |
//! | 2 | invalid configuration |
//! | 3 | invalid or unusable data |
//! | 4 | sampler diverged on almost every transition |
//! | 5 | an artifact from an earlier command is missing |

use std::fmt;
use std::path::Path;

use cdm_hmm::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Io = 1,
    Config = 2,
    Data = 3,
    Divergent = 4,
    MissingArtifact = 5,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Config, message)
    }

    pub fn missing(path: &Path, producer: &str) -> Self {
        Self::new(
            ExitKind::MissingArtifact,
            format!("{} not found; run `{producer}` first", path.display()),
        )
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }

    /// Prefixes the message with what was being done.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Io(_) => ExitKind::Io,
            Error::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => ExitKind::Io,
            Error::InvalidConfig(_) => ExitKind::Config,
            Error::AllDivergent { .. } => ExitKind::Divergent,
            _ => ExitKind::Data,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(ExitKind::Io, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::new(ExitKind::Data, e.to_string())
    }
}

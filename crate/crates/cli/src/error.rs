use std::fmt;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 10;
pub const EXIT_DIVERGED: i32 = 20;
pub const EXIT_CHECK_FAILED: i32 = 30;
pub const EXIT_INTERNAL: i32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Config, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Io, message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Internal, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => EXIT_CONFIG,
            ErrorKind::Io | ErrorKind::Internal => EXIT_INTERNAL,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self.kind {
            ErrorKind::Config => "config error",
            ErrorKind::Io => "io error",
            ErrorKind::Internal => "error",
        };
        write!(f, "{label}: {}", self.message)
    }
}

impl std::error::Error for CliError {}

/// Configuration-shaped core errors map to exit code 10.
impl From<fedweight_core::Error> for CliError {
    fn from(e: fedweight_core::Error) -> Self {
        use fedweight_core::Error as E;
        match e {
            E::Io { .. } => Self::io(e.to_string()),
            E::InvalidConfig(_)
            | E::InvalidWeights(_)
            | E::InvalidDataset(_)
            | E::InfeasiblePartition(_)
            | E::Parse(_)
            | E::BadMagic { .. }
            | E::Truncated { .. }
            | E::CountMismatch { .. }
            | E::NotPositiveDefinite { .. }
            | E::NotSymmetric { .. }
            | E::Singular { .. }
            | E::DimensionMismatch { .. } => Self::config(e.to_string()),
            _ => Self::internal(e.to_string()),
        }
    }
}

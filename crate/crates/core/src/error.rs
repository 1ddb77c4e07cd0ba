use thiserror::Error;

/// Errors raised by the simulator and its building blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("matrix is numerically singular (condition estimate {condition:e} exceeds 1e12)")]
    Singular { condition: f64 },

    #[error("empty mini-batch")]
    EmptyBatch,

    #[error("sample index {index} out of range for a dataset of {len} samples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("objectives of different kinds cannot be combined")]
    MixedObjectives,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("IDX {file}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { file: String, found: u32, expected: u32 },

    #[error("IDX {file}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated { file: String, expected: usize, found: usize },

    #[error("IDX count mismatch: images file holds {images} items, labels file holds {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Parse(#[from] crate::strategies::ParseError),

    #[error("client {client} diverged at local step {step}: {reason}")]
    Diverged { client: usize, step: u64, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("trajectories were not retained for this run")]
    MissingTrajectories,

    #[error("not enough samples: need at least {needed}, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

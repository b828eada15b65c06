use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A value lies outside the state space or admissible range.
    #[error("domain error: {0}")]
    Domain(String),
    /// Structurally invalid or non-finite input.
    #[error("validation error: {0}")]
    Validation(String),
    /// A probability is zero where an interior point is required.
    #[error("boundary error: {0}")]
    Boundary(String),
    #[error("expansion has more than {cap} terms")]
    CapExceeded { cap: u64 },
    #[error("refused: {0}")]
    Refused(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },
    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: i64, expected: i64 },
    #[error("model checksum mismatch: file says {stored}, content hashes to {computed}")]
    Checksum { stored: String, computed: String },
    #[error("simplex violation in {block}: entries sum to {sum}")]
    Simplex { block: String, sum: f64 },
    #[error("malformed model file: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("expected {expected} bits, got {got}")]
    BitLength { expected: usize, got: usize },

    #[error("non-binary value {value} at position {position}")]
    NonBinary { position: usize, value: u8 },

    #[error("codeword index {index} outside [1, {max}]")]
    IndexOutOfRange { index: u64, max: u64 },

    #[error("codebook with 2^{bp} columns exceeds the supported maximum of 2^{max}")]
    CodebookTooLarge { bp: usize, max: usize },

    #[error("LDPC construction for (lc={lc}, bc={bc}) failed after {attempts} attempts (seed {seed})")]
    LdpcConstruction {
        lc: usize,
        bc: usize,
        seed: u64,
        attempts: usize,
    },

    #[error("parity-check matrix is rank deficient (rank {rank} < {rows})")]
    RankDeficient { rank: usize, rows: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("AMP diverged at iteration {iteration}: tau^2 = {tau_sq:e}")]
    AmpDiverged { iteration: usize, tau_sq: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

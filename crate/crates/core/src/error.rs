//! Error taxonomy shared across the library.
//!
//! Variants map onto the CLI exit-code contract: configuration and schema
//! problems exit 2, numerical failures exit 3, filesystem-policy refusals
//! exit 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or inconsistent settings. The string
    /// names the offending field path.
    #[error("config error: {0}")]
    Config(String),

    /// Data did not match an expected schema (column names, term
    /// vocabularies, file headers).
    #[error("schema error: {0}")]
    Schema(String),

    /// A numerical procedure failed (divergence, singular system,
    /// non-finite values). The message includes location information such
    /// as a step index where applicable.
    #[error("numerical error: {0}")]
    Numerics(String),

    /// Refusal to clobber existing output without an explicit overwrite.
    #[error("output path {0} already exists; pass --overwrite to replace it")]
    OutputExists(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Helper to wrap an I/O error with the path it occurred on.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// CLI exit code for this error per the documented contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Schema(_) | Error::Io { .. } | Error::Parse(_) => 2,
            Error::Numerics(_) => 3,
            Error::OutputExists(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

//! Command-line error type and its mapping onto process exit codes.

use std::path::PathBuf;

use thiserror::Error;

/// Failures surfaced by the command-line layer.
///
/// Validation problems (bad flags, malformed files, impossible requests) exit
/// with code 2; numerical failures inside the estimation routines exit with
/// code 3. Argument-grammar errors are handled before a `CliError` exists and
/// exit with code 64.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("block (i={i}, j={j}) does not cover every period in the file")]
    RaggedTime { i: String, j: String },

    #[error("non-numeric cell in line {row}")]
    NonNumericCell { row: u64 },

    #[error("duplicate key (i={i}, j={j}, t={t})")]
    DuplicateKey { i: String, j: String, t: i64 },

    #[error("invalid value for {flag}: {detail}")]
    Flag { flag: &'static str, detail: String },

    #[error("{path}: {detail}")]
    Config { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        source: csv::Error,
    },

    #[error(transparent)]
    Core(#[from] hpanel_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e {
                hpanel_core::Error::RankDeficient { .. }
                | hpanel_core::Error::SingularBlock { .. }
                | hpanel_core::Error::Numerical { .. } => 3,
                _ => 2,
            },
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    #[error("invalid scenario: {}", .0.join("; "))]
    InvalidScenario(Vec<String>),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("assignment violates exclusivity at cell {cell}, subcarrier {subcarrier}")]
    Exclusivity { cell: usize, subcarrier: usize },

    #[error("failed to parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_path_to_error::Error<serde_json::Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("singular KKT system in cell {cell} at iteration {iteration}")]
    SingularKkt { cell: usize, iteration: usize },

    #[error("solver diverged in cell {cell} at iteration {iteration}: {reason}")]
    Diverged {
        cell: usize,
        iteration: usize,
        reason: String,
    },

    #[error("missing state for cell {0}")]
    MissingCell(usize),

    #[error("instance too large: {0}")]
    TooLarge(String),
}

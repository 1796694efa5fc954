use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: unexpected column `{column}` (pass --lenient to ignore)")]
    UnknownColumn { path: PathBuf, column: String },

    #[error("{path}: missing required column `{column}`")]
    MissingHeader { path: PathBuf, column: String },

    #[error("duplicate {what} {id}")]
    Duplicate { what: &'static str, id: String },

    #[error("unknown word_id {0}")]
    UnknownWord(u32),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("column `{0}` not found in dataset")]
    MissingColumn(String),

    #[error("fixed-effects matrix is rank deficient: column `{0}` is linearly dependent on earlier columns")]
    RankDeficient(String),

    #[error("grouping factor `{name}` has {levels} level(s); at least 2 are required")]
    TooFewLevels { name: String, levels: usize },

    #[error("penalized least-squares system is numerically singular")]
    Singular,

    #[error("no rows left after exclusions")]
    EmptyDataset,

    #[error("fits were computed on different datasets ({0} vs {1})")]
    DatasetMismatch(String, String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: &std::path::Path, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by bad input rather than numerical failure or I/O.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Singular)
    }
}

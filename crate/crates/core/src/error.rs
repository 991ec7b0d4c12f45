use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// Errors raised while reading or writing corpus and auxiliary files.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("line {line}: duplicate dialogue id {id:?}")]
    DuplicateId { id: String, line: usize },
    #[error("{0}")]
    Invalid(String),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

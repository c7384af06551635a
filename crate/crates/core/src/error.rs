use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AccrualError>;

#[derive(Debug, Error)]
pub enum AccrualError {
    #[error("cannot open {}", path.display())]
    Open {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    /// A rejected input row. `row` is 1-based and counts the header as row 1.
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no enrollments observed")]
    NoEnrollments,

    #[error("insufficient post-plateau data: {0}")]
    InsufficientPlateauData(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

impl AccrualError {
    pub(crate) fn row(row: usize, message: impl Into<String>) -> Self {
        AccrualError::Row { row, message: message.into() }
    }
}

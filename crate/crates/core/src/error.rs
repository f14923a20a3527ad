use std::io;

use thiserror::Error;

/// Errors raised by the analysis pipeline.
///
/// Variants are grouped so the CLI can map them onto stable exit codes:
/// domain errors are caller mistakes, parse/data/io errors come from inputs,
/// and degenerate/numeric errors come from the numerics themselves.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{message} (last estimate in [{lower}, {upper}])")]
    Numeric {
        message: String,
        lower: f64,
        upper: f64,
    },

    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Parse { .. } => "parse",
            Error::Data(_) => "data",
            Error::Degenerate(_) => "degenerate",
            Error::Numeric { .. } => "numeric",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

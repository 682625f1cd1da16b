use thiserror::Error;

use crate::dictionary::ModelError;
use crate::graphstore::SubmissionResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("authentication required")]
    Unauthenticated,
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("revision conflict: expected {expected}, current {current}")]
    RevConflict { expected: String, current: String },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("submission rejected")]
    Rejected(Box<SubmissionResult>),
    #[error("invalid data model: {}", join_model_errors(.0))]
    Model(Vec<ModelError>),
    #[error("checksum mismatch: container says {declared}, dictionary hashes to {actual}")]
    ChecksumMismatch { declared: String, actual: String },
    #[error("etl mapping: {0}")]
    Mapping(String),
    #[error("query syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn join_model_errors(errs: &[ModelError]) -> String {
    errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl Error {
    /// Stable machine-readable code used in the wire error envelope.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NotFound(_) => "not_found",
            Error::Unauthenticated => "unauthenticated",
            Error::Forbidden(_) => "forbidden",
            Error::Conflict(_) => "conflict",
            Error::RevConflict { .. } => "rev_conflict",
            Error::BadRequest(_) => "bad_request",
            Error::Rejected(_) => "validation_failed",
            Error::Model(_) => "model_error",
            Error::ChecksumMismatch { .. } => "checksum_mismatch",
            Error::Mapping(_) => "mapping_error",
            Error::Syntax { .. } => "syntax_error",
            Error::Config(_) => "config_error",
            Error::Io(_) => "internal",
        }
    }
}

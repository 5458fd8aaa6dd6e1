use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataSourceError {
    #[error("data source unreachable: {0}")]
    Unreachable(String),
    #[error("failed to parse input: {0}")]
    ParseFailure(String),
    #[error("data source id `{0}` is already registered")]
    DuplicateId(String),
    #[error("row {row} has {found} fields, header has {expected}")]
    RaggedRows {
        row: u64,
        expected: usize,
        found: usize,
    },
    #[error("CSV file has no header row")]
    EmptyFile,
    #[error("invalid data source config: {0}")]
    InvalidConfig(String),
    #[error("no connector available for {0}")]
    UnsupportedKind(String),
    #[error("unknown data source `{0}`")]
    UnknownId(String),
    #[error("engine error: {0}")]
    Engine(#[from] rusqlite::Error),
}

impl DataSourceError {
    /// Stable machine-readable reason code.
    pub fn reason(&self) -> &'static str {
        match self {
            DataSourceError::Unreachable(_) => "unreachable",
            DataSourceError::ParseFailure(_) => "parse-failure",
            DataSourceError::DuplicateId(_) => "duplicate-id",
            DataSourceError::RaggedRows { .. } => "ragged-rows",
            DataSourceError::EmptyFile => "empty-file",
            DataSourceError::InvalidConfig(_) => "invalid-config",
            DataSourceError::UnsupportedKind(_) => "unsupported-kind",
            DataSourceError::UnknownId(_) => "unknown-id",
            DataSourceError::Engine(_) => "engine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecutionErrorKind {
    Syntax,
    MissingRelation,
    TypeError,
    Timeout,
    Other,
}

impl ExecutionErrorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExecutionErrorKind::Syntax => "syntax",
            ExecutionErrorKind::MissingRelation => "missing-relation",
            ExecutionErrorKind::TypeError => "type-error",
            ExecutionErrorKind::Timeout => "timeout",
            ExecutionErrorKind::Other => "other",
        }
    }
}

/// Failure while executing SQL. `message` is the engine's text, unmodified.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub struct ExecutionError {
    pub kind: ExecutionErrorKind,
    pub message: String,
}

impl fmt::Display for ExecutionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind.as_str(), self.message)
    }
}

impl ExecutionError {
    pub fn new(kind: ExecutionErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub(crate) fn from_engine(err: &rusqlite::Error) -> Self {
        let message = match err {
            rusqlite::Error::SqliteFailure(_, Some(msg)) => msg.clone(),
            rusqlite::Error::SqlInputError { msg, .. } => msg.clone(),
            other => other.to_string(),
        };
        let kind = match err {
            rusqlite::Error::SqliteFailure(e, _) if e.code == rusqlite::ErrorCode::OperationInterrupted => {
                ExecutionErrorKind::Timeout
            }
            _ => classify_message(&message),
        };
        Self { kind, message }
    }
}

fn classify_message(message: &str) -> ExecutionErrorKind {
    let lower = message.to_ascii_lowercase();
    if lower.contains("no such table")
        || lower.contains("no such column")
        || lower.contains("no such function")
        || lower.contains("ambiguous column")
    {
        ExecutionErrorKind::MissingRelation
    } else if lower.contains("syntax error") || lower.contains("incomplete input") || lower.contains("unrecognized token") {
        ExecutionErrorKind::Syntax
    } else if lower.contains("mismatch") || lower.contains("wrong number of arguments") {
        ExecutionErrorKind::TypeError
    } else if lower.contains("interrupt") {
        ExecutionErrorKind::Timeout
    } else {
        ExecutionErrorKind::Other
    }
}

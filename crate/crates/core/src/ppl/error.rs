use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::Span;
use super::validate::Diagnostic;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParseErrorKind {
    Syntax { expected: String },
    UnknownIdentifier { name: String },
    UnsupportedConstruct { construct: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub message: String,
    pub line: usize,
    pub column: usize,
    pub span: Span,
}

/// A failure while executing a model, as opposed to a rejection. It means
/// the model itself is broken (bad probability, non-finite arithmetic, ...).
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("runtime error: {message}")]
pub struct RuntimeError {
    pub message: String,
}

impl RuntimeError {
    pub(crate) fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnumerateError {
    #[error("program draws from a continuous distribution (`gaussian`); exact enumeration needs discrete choices only")]
    ContinuousUnsupported,
    #[error("more than {cap} execution paths")]
    PathExplosion { cap: u64 },
    #[error("no execution path satisfies the conditions")]
    ZeroEvidence,
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EditError {
    #[error("edit target not found: {0}")]
    EditTargetMissing(String),
    #[error("edit produces an invalid program: {}", summarize(.diagnostics))]
    EditProducesInvalidProgram { diagnostics: Vec<Diagnostic> },
    #[error("malformed edit: {0}")]
    Malformed(String),
}

fn summarize(diagnostics: &[Diagnostic]) -> String {
    diagnostics
        .iter()
        .map(|d| d.message.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}

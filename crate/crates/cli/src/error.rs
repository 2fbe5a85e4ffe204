//! Machine-readable errors shared by the CLI and the service.

use std::fmt;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use medmsa::canonicalize::CanonicalizeError;
use medmsa::differential::DifferentialError;
use medmsa::intervene::InterventionError;
use medmsa::lm::LmError;
use medmsa::ppl::EditError;
use medmsa::runner::RunError;
use medmsa::store::{StoreError, SCHEMA_VERSION};
use medmsa::synthesis::SynthesisError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// The published error codes. Every error body carries one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    RunNotFound,
    ModelNotFound,
    QueryNotFound,
    NoValidModels,
    ModelNotCompiled,
    RunInProgress,
    RunExists,
    RunIncomplete,
    SchemaVersionMismatch,
    EditInvalid,
    EditTargetMissing,
    FixtureMissing,
    BackendUnavailable,
    RateLimited,
    Internal,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 17] = [
        ErrorCode::BadRequest,
        ErrorCode::NotFound,
        ErrorCode::RunNotFound,
        ErrorCode::ModelNotFound,
        ErrorCode::QueryNotFound,
        ErrorCode::NoValidModels,
        ErrorCode::ModelNotCompiled,
        ErrorCode::RunInProgress,
        ErrorCode::RunExists,
        ErrorCode::RunIncomplete,
        ErrorCode::SchemaVersionMismatch,
        ErrorCode::EditInvalid,
        ErrorCode::EditTargetMissing,
        ErrorCode::FixtureMissing,
        ErrorCode::BackendUnavailable,
        ErrorCode::RateLimited,
        ErrorCode::Internal,
    ];

    pub fn status(self) -> StatusCode {
        use ErrorCode::*;
        match self {
            BadRequest => StatusCode::BAD_REQUEST,
            NotFound | RunNotFound | ModelNotFound | QueryNotFound => StatusCode::NOT_FOUND,
            NoValidModels | ModelNotCompiled | RunInProgress | RunExists | RunIncomplete | SchemaVersionMismatch => {
                StatusCode::CONFLICT
            }
            EditInvalid | EditTargetMissing => StatusCode::UNPROCESSABLE_ENTITY,
            FixtureMissing => StatusCode::BAD_GATEWAY,
            BackendUnavailable | RateLimited => StatusCode::SERVICE_UNAVAILABLE,
            Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    /// Process exit code for the CLI: 1 for bad input, 3 when a run has no
    /// valid models, 2 for everything that failed while running.
    pub fn exit_code(self) -> u8 {
        use ErrorCode::*;
        match self {
            BadRequest | NotFound | RunNotFound | ModelNotFound | QueryNotFound | ModelNotCompiled | EditInvalid
            | EditTargetMissing | RunExists => 1,
            NoValidModels => 3,
            _ => 2,
        }
    }

    pub fn as_string(self) -> String {
        match serde_json::to_value(self) {
            Ok(Value::String(s)) => s,
            _ => "INTERNAL".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }

    pub fn status(&self) -> StatusCode {
        self.code.status()
    }

    /// The response body: `{schema_version, error: {code, message, details}}`.
    pub fn body(&self) -> Value {
        json!({ "schema_version": SCHEMA_VERSION, "error": self })
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}

impl From<LmError> for ApiError {
    fn from(e: LmError) -> Self {
        let code = match &e {
            LmError::FixtureMissing { .. } => ErrorCode::FixtureMissing,
            LmError::RateLimited { .. } => ErrorCode::RateLimited,
            LmError::BackendUnavailable { .. } | LmError::EmptyCompletion => ErrorCode::BackendUnavailable,
        };
        let details = serde_json::to_value(&e).unwrap_or(Value::Null);
        ApiError::new(code, e.to_string()).with_details(details)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let code = match &e {
            StoreError::RunNotFound(_) => ErrorCode::RunNotFound,
            StoreError::VersionNotFound(_) => ErrorCode::ModelNotFound,
            StoreError::DuplicateRunId(_) => ErrorCode::RunExists,
            StoreError::IncompleteRun(_) => ErrorCode::RunIncomplete,
            StoreError::SchemaVersionMismatch { .. } => ErrorCode::SchemaVersionMismatch,
            StoreError::Io { .. } | StoreError::Json { .. } => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<EditError> for ApiError {
    fn from(e: EditError) -> Self {
        match &e {
            EditError::EditTargetMissing(_) => ApiError::new(ErrorCode::EditTargetMissing, e.to_string()),
            EditError::EditProducesInvalidProgram { diagnostics } => ApiError::new(ErrorCode::EditInvalid, e.to_string())
                .with_details(json!({ "diagnostics": diagnostics })),
            EditError::Malformed(_) => ApiError::new(ErrorCode::EditInvalid, e.to_string()),
        }
    }
}

impl From<CanonicalizeError> for ApiError {
    fn from(e: CanonicalizeError) -> Self {
        match e {
            CanonicalizeError::Lm(e) => e.into(),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<DifferentialError> for ApiError {
    fn from(e: DifferentialError) -> Self {
        match e {
            DifferentialError::NoValidModels => ApiError::new(ErrorCode::NoValidModels, "the run has no valid models"),
            DifferentialError::UnknownQuery(q) => {
                ApiError::new(ErrorCode::QueryNotFound, format!("query `{q}` is not produced by the models"))
            }
            DifferentialError::Canonicalize(e) => e.into(),
        }
    }
}

impl From<InterventionError> for ApiError {
    fn from(e: InterventionError) -> Self {
        match e {
            InterventionError::ModelNotFound(m) => ApiError::new(ErrorCode::ModelNotFound, format!("model {m} not found")),
            InterventionError::ModelNotCompiled(m) => ApiError::new(
                ErrorCode::ModelNotCompiled,
                format!("model {m} did not compile; only compiled models can be edited"),
            ),
            InterventionError::Edit(e) => e.into(),
            InterventionError::Runtime(e) => ApiError::new(ErrorCode::EditInvalid, format!("edited model failed at run time: {e}"))
                .with_details(json!({ "runtime_error": e.to_string() })),
            InterventionError::Canonicalize(e) => e.into(),
            InterventionError::Differential(e) => e.into(),
            InterventionError::Store(e) => e.into(),
        }
    }
}

impl From<RunError> for ApiError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Synthesis(SynthesisError::Lm(e)) => e.into(),
            RunError::Synthesis(e) => ApiError::bad_request(e.to_string()),
            RunError::Canonicalize(e) => e.into(),
            RunError::Differential(e) => e.into(),
            RunError::Store(e) => e.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_serialize_screaming() {
        assert_eq!(serde_json::to_value(ErrorCode::NoValidModels).unwrap(), "NO_VALID_MODELS");
        assert_eq!(ErrorCode::EditTargetMissing.as_string(), "EDIT_TARGET_MISSING");
        for code in ErrorCode::ALL {
            let back: ErrorCode = serde_json::from_value(serde_json::to_value(code).unwrap()).unwrap();
            assert_eq!(back, code);
        }
    }

    #[test]
    fn statuses_follow_the_contract() {
        assert_eq!(ErrorCode::RunNotFound.status(), StatusCode::NOT_FOUND);
        assert_eq!(ErrorCode::ModelNotCompiled.status(), StatusCode::CONFLICT);
        assert_eq!(ErrorCode::EditInvalid.status(), StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(ErrorCode::NoValidModels.exit_code(), 3);
        assert_eq!(ErrorCode::FixtureMissing.exit_code(), 2);
        assert_eq!(ErrorCode::BadRequest.exit_code(), 1);
    }

    #[test]
    fn body_carries_schema_version() {
        let body = ApiError::new(ErrorCode::RunNotFound, "run x not found").body();
        assert_eq!(body["schema_version"], SCHEMA_VERSION);
        assert_eq!(body["error"]["code"], "RUN_NOT_FOUND");
        assert!(body["error"].get("details").is_none());
    }
}

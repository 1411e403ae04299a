use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cysto_core::catalog::CatalogError;
use cysto_core::export::ExportError;
use cysto_core::qc::ConsensusError;
use cysto_core::workspace::WorkspaceError;
use serde_json::json;

/// Error body `{code, detail}` with its status.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub detail: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, detail: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            detail: detail.into(),
        }
    }

    pub fn unauthorized(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "Unauthorized", detail)
    }

    pub fn forbidden(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "Forbidden", detail)
    }

    pub fn not_found(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", detail)
    }

    pub fn bad_request(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", detail)
    }

    pub fn unprocessable(code: &'static str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, detail)
    }

    pub fn conflict(code: &'static str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, detail)
    }

    pub fn internal(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", detail)
    }

    pub fn body(&self) -> serde_json::Value {
        json!({ "code": self.code, "detail": self.detail })
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        let detail = e.to_string();
        match e {
            CatalogError::UnknownPatient(_) | CatalogError::UnknownCase(_) | CatalogError::UnknownAsset(_) => {
                ApiError::not_found(detail)
            }
            CatalogError::ParseFailure(_) => ApiError::unprocessable("UnknownVocab", detail),
            CatalogError::UidMismatch { .. } => ApiError::unprocessable("UidMismatch", detail),
            CatalogError::IllegalTransition { .. } => ApiError::conflict("IllegalTransition", detail),
            CatalogError::GateNotPassed { .. } => ApiError::conflict("GateNotPassed", detail),
            CatalogError::AssetDeleted(_) => ApiError::conflict("AssetDeleted", detail),
            CatalogError::NotAVideo(_) => ApiError::unprocessable("NotAVideo", detail),
            CatalogError::DuplicateCase { .. } => ApiError::conflict("DuplicateCase", detail),
            CatalogError::IoFailure(_) | CatalogError::Csv(_) => ApiError::internal(detail),
        }
    }
}

impl From<ConsensusError> for ApiError {
    fn from(e: ConsensusError) -> Self {
        let code = match e {
            ConsensusError::DuplicateVote(_) => "DuplicateVote",
            ConsensusError::EmptyPanel => return ApiError::internal(e.to_string()),
            ConsensusError::TooManyUrologistVotes { .. } => "PanelFull",
            ConsensusError::MultipleLeaderVotes => "DuplicateVote",
            ConsensusError::AlreadyDecided(_) => "AlreadyDecided",
            ConsensusError::NotEscalated(_) => "NotEscalated",
        };
        ApiError::conflict(code, e.to_string())
    }
}

impl From<ExportError> for ApiError {
    fn from(e: ExportError) -> Self {
        match e {
            ExportError::Catalog(c) => c.into(),
            ExportError::IncompleteLabel(_) => ApiError::unprocessable("NotReleased", e.to_string()),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<WorkspaceError> for ApiError {
    fn from(e: WorkspaceError) -> Self {
        match e {
            WorkspaceError::Catalog(c) => c.into(),
            WorkspaceError::Export(x) => x.into(),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(e.status(), "MalformedRequest", e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

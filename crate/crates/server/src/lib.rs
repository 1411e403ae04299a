//! HTTP facade over a curation workspace.
//!
//! Every request except `GET /vocabulary` carries `Authorization: Bearer
//! <token>`; the token maps to a user, a clearance and an optional review
//! role in the service config. Successful bodies are JSON objects with an
//! `access_level` field (mirrored in the `x-access-level` header); errors
//! are `{code, detail}`. Mutations accept an `idempotency-key` header and
//! replay the stored response when a request is retried under the same key.

pub mod config;
mod error;
mod routes;
mod views;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::FromRequestParts;
use axum::http::request::Parts;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use cysto_core::export::AccessLevel;
use cysto_core::qc::ReviewerRole;
use cysto_core::workspace::Workspace;
use serde_json::Value;

pub use config::{ServeError, ServiceConfig, UserEntry, DEFAULT_PAGE_SIZE};
pub use error::ApiError;

pub const ACCESS_LEVEL_HEADER: &str = "x-access-level";
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

/// The authenticated caller of one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionContext {
    pub user_id: String,
    pub clearance: AccessLevel,
    pub role: Option<ReviewerRole>,
    pub expires_at: Option<DateTime<Utc>>,
}

impl SessionContext {
    pub fn require(&self, level: AccessLevel) -> Result<(), ApiError> {
        if self.clearance.permits(level) {
            Ok(())
        } else {
            Err(ApiError::forbidden(format!(
                "{} clearance is {}, {level} required",
                self.user_id, self.clearance
            )))
        }
    }

    /// Whether raw identifiers may be shown.
    pub fn identified(&self) -> bool {
        self.clearance.permits(AccessLevel::Confidential)
    }

    /// Level of a catalog view served to this session.
    pub fn catalog_level(&self) -> AccessLevel {
        if self.identified() {
            AccessLevel::Confidential
        } else {
            AccessLevel::Internal
        }
    }
}

/// A successful response at a given access level.
#[derive(Debug, Clone)]
pub struct Served {
    pub status: StatusCode,
    pub level: AccessLevel,
    pub body: Value,
}

impl Served {
    pub fn ok(level: AccessLevel, body: Value) -> Self {
        Served {
            status: StatusCode::OK,
            level,
            body,
        }
    }
}

impl IntoResponse for Served {
    fn into_response(self) -> Response {
        let mut body = self.body;
        if body.is_object() && self.level < AccessLevel::Confidential {
            views::scrub(&mut body);
        }
        if let Value::Object(m) = &mut body {
            m.insert("access_level".into(), serde_json::json!(self.level));
        }
        let mut res = (self.status, Json(body)).into_response();
        res.headers_mut().insert(
            ACCESS_LEVEL_HEADER,
            HeaderValue::from_str(&self.level.to_string()).expect("ascii level"),
        );
        res
    }
}

pub(crate) struct Inner {
    pub ws: Workspace,
    /// Responses of completed mutations by (user, route, key).
    pub replay: HashMap<(String, String, String), Served>,
}

pub struct AppState {
    inner: Mutex<Inner>,
    users: HashMap<String, UserEntry>,
    page_size: usize,
    clock: fn() -> DateTime<Utc>,
}

impl AppState {
    pub fn new(ws: Workspace, users: Vec<UserEntry>, page_size: usize) -> Self {
        AppState {
            inner: Mutex::new(Inner {
                ws,
                replay: HashMap::new(),
            }),
            users: users.into_iter().map(|u| (u.token.clone(), u)).collect(),
            page_size,
            clock: Utc::now,
        }
    }

    /// Fixes the clock used for token expiry and timestamps.
    pub fn with_clock(mut self, clock: fn() -> DateTime<Utc>) -> Self {
        self.clock = clock;
        self
    }

    pub(crate) fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }

    pub(crate) fn lock(&self) -> Result<MutexGuard<'_, Inner>, ApiError> {
        self.inner.lock().map_err(|_| ApiError::internal("workspace lock poisoned"))
    }

    /// Runs `f` against the workspace, for callers outside the service.
    pub fn with_workspace<T>(&self, f: impl FnOnce(&mut Workspace) -> T) -> T {
        let mut inner = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut inner.ws)
    }

    fn session(&self, token: &str) -> Result<SessionContext, ApiError> {
        let user = self.users.get(token).ok_or_else(|| ApiError::unauthorized("unknown token"))?;
        if user.expires_at.is_some_and(|t| t <= self.now()) {
            return Err(ApiError::unauthorized("session expired"));
        }
        Ok(SessionContext {
            user_id: user.user_id.clone(),
            clearance: user.clearance,
            role: user.role,
            expires_at: user.expires_at,
        })
    }
}

impl FromRequestParts<Arc<AppState>> for SessionContext {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Arc<AppState>) -> Result<Self, Self::Rejection> {
        let value = parts
            .headers
            .get(header::AUTHORIZATION)
            .ok_or_else(|| ApiError::unauthorized("missing bearer token"))?;
        let token = value
            .to_str()
            .ok()
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(|| ApiError::unauthorized("malformed authorization header"))?;
        state.session(token.trim())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    routes::routes().with_state(state)
}

/// Opens the workspace and serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> Result<(), ServeError> {
    config.validate()?;
    let ws = Workspace::open(&config.workspace).map_err(|e| ServeError::BadConfig(e.to_string()))?;
    let state = Arc::new(AppState::new(ws, config.users, config.page_size));
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .map_err(|source| ServeError::BindFailure {
            addr: config.bind,
            source,
        })?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}

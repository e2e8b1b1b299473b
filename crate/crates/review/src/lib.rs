//! HTTP API over a review bundle and its ratings log.
//!
//! Reviewer-facing payloads carry [`BlindItem`]s only. The source label of an
//! item leaves the server through the admin-only export.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use legacydoc_core::review::{
    export_reviews, rubric, Assignment, AssignmentStatus, BlindItem, Category, ExportFormat,
    Progress, ReviewBundle, ReviewError, ReviewItem, ReviewRecord, ReviewStore, Reviewer, Roster,
    Scores,
};

/// Environment variable holding the admin token for `/api/export`.
pub const ADMIN_TOKEN_ENV: &str = "LEGACYDOC_ADMIN_TOKEN";

pub struct ReviewState {
    items: BTreeMap<String, ReviewItem>,
    assignments: Vec<Assignment>,
    roster: Roster,
    store: RwLock<ReviewStore>,
    admin_token: Option<String>,
}

impl ReviewState {
    /// Export is disabled when `admin_token` is `None`.
    pub fn new(bundle: ReviewBundle, store: ReviewStore, admin_token: Option<String>) -> Self {
        ReviewState {
            items: bundle
                .items
                .into_iter()
                .map(|i| (i.item_id.clone(), i))
                .collect(),
            assignments: bundle.assignments,
            roster: bundle.roster,
            store: RwLock::new(store),
            admin_token: admin_token.filter(|t| !t.is_empty()),
        }
    }

    /// Loads the bundle from `bundle_dir` and replays the log in `log_dir`.
    pub fn open(
        bundle_dir: &Path,
        log_dir: &Path,
        admin_token: Option<String>,
    ) -> Result<Self, ReviewError> {
        let bundle = ReviewBundle::load(bundle_dir)?;
        let store = ReviewStore::open(log_dir, &bundle.assignments)?;
        Ok(Self::new(bundle, store, admin_token))
    }

    fn reviewer(&self, token: &str) -> Result<&Reviewer, ApiError> {
        self.roster
            .by_token(token)
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unknown reviewer token"))
    }

    fn store(&self) -> std::sync::RwLockReadGuard<'_, ReviewStore> {
        self.store.read().unwrap_or_else(|e| e.into_inner())
    }

    /// Flushes a snapshot of the effective ratings.
    pub fn snapshot(&self) -> Result<(), ReviewError> {
        self.store().snapshot()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(ErrorBody {
                error: &self.message,
            }),
        )
            .into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let status = match &e {
            ReviewError::MissingCategory(_) | ReviewError::RatingRange { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ReviewError::UnknownAssignment { .. } => StatusCode::FORBIDDEN,
            ReviewError::UnknownReviewer => StatusCode::UNAUTHORIZED,
            ReviewError::UnknownItem(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            tracing::error!(error = %e, "review store failure");
        }
        ApiError::new(status, e.to_string())
    }
}

#[derive(Deserialize)]
struct ReviewerQuery {
    reviewer: String,
}

#[derive(Serialize)]
struct AssignmentEntry<'a> {
    item_id: &'a str,
    status: AssignmentStatus,
}

#[derive(Serialize)]
struct AssignmentList<'a> {
    reviewer_id: &'a str,
    assignments: Vec<AssignmentEntry<'a>>,
}

async fn assignments(
    State(state): State<Arc<ReviewState>>,
    Query(q): Query<ReviewerQuery>,
) -> Result<Response, ApiError> {
    let reviewer = state.reviewer(&q.reviewer)?;
    let store = state.store();
    let list = AssignmentList {
        reviewer_id: &reviewer.id,
        assignments: state
            .assignments
            .iter()
            .filter(|a| a.reviewer_id == reviewer.id)
            .map(|a| AssignmentEntry {
                item_id: &a.item_id,
                status: store.status(&reviewer.id, &a.item_id),
            })
            .collect(),
    };
    Ok(Json(list).into_response())
}

#[derive(Serialize)]
struct ItemView {
    item: BlindItem,
    status: AssignmentStatus,
    scores: Option<Scores>,
}

async fn item(
    State(state): State<Arc<ReviewState>>,
    UrlPath(item_id): UrlPath<String>,
    Query(q): Query<ReviewerQuery>,
) -> Result<Json<ItemView>, ApiError> {
    let reviewer = state.reviewer(&q.reviewer)?;
    let item = state
        .items
        .get(&item_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown item {item_id}")))?;
    let store = state.store();
    if !store.is_assigned(&reviewer.id, &item_id) {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "item is not assigned to this reviewer",
        ));
    }
    Ok(Json(ItemView {
        item: item.blind(),
        status: store.status(&reviewer.id, &item_id),
        scores: store.get(&reviewer.id, &item_id).map(|r| r.scores.clone()),
    }))
}

#[derive(Deserialize)]
struct SubmitRequest {
    reviewer: String,
    item_id: String,
    scores: BTreeMap<String, i64>,
}

#[derive(Serialize)]
struct SubmitAck {
    item_id: String,
    status: AssignmentStatus,
    revisions: usize,
}

fn parse_scores(raw: &BTreeMap<String, i64>) -> Result<Scores, ApiError> {
    let mut scores = Scores::new();
    for (name, &value) in raw {
        let category = Category::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| {
                ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    format!("unknown category `{name}`"),
                )
            })?;
        let rating = u8::try_from(value).map_err(|_| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("rating {value} for {category} is outside 1-4"),
            )
        })?;
        scores.insert(category, rating);
    }
    Ok(scores)
}

async fn submit(
    State(state): State<Arc<ReviewState>>,
    body: Result<Json<SubmitRequest>, JsonRejection>,
) -> Result<Json<SubmitAck>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(e.status(), e.body_text()))?;
    let reviewer = state.reviewer(&req.reviewer)?;
    if !state.items.contains_key(&req.item_id) {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("unknown item {}", req.item_id),
        ));
    }
    let record = ReviewRecord {
        reviewer_id: reviewer.id.clone(),
        item_id: req.item_id.clone(),
        scores: parse_scores(&req.scores)?,
        submitted_at: Utc::now(),
    };
    let mut store = state.store.write().unwrap_or_else(|e| e.into_inner());
    store.submit(record)?;
    Ok(Json(SubmitAck {
        status: store.status(&reviewer.id, &req.item_id),
        revisions: store.history_len(&reviewer.id, &req.item_id),
        item_id: req.item_id,
    }))
}

async fn progress(State(state): State<Arc<ReviewState>>) -> Json<Vec<Progress>> {
    Json(state.store().progress())
}

async fn rubric_text() -> Response {
    Json(rubric()).into_response()
}

#[derive(Deserialize)]
struct ExportQuery {
    #[serde(default)]
    format: Option<String>,
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
}

async fn export(
    State(state): State<Arc<ReviewState>>,
    headers: HeaderMap,
    Query(q): Query<ExportQuery>,
) -> Result<Response, ApiError> {
    let Some(expected) = state.admin_token.as_deref() else {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "export is disabled without an admin token",
        ));
    };
    if bearer(&headers) != Some(expected) {
        return Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "admin token required",
        ));
    }
    let format: ExportFormat = q
        .format
        .as_deref()
        .unwrap_or("jsonl")
        .parse()
        .map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    let items: Vec<ReviewItem> = state.items.values().cloned().collect();
    let body = export_reviews(&state.store().effective(), &items, format)?;
    let content_type = match format {
        ExportFormat::Jsonl => "application/x-ndjson",
        ExportFormat::Csv => "text/csv; charset=utf-8",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
}

/// The API under `/api`; other paths are served from `static_dir` if given.
pub fn router(state: Arc<ReviewState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/assignments", get(assignments))
        .route("/api/items/{item_id}", get(item))
        .route("/api/reviews", post(submit))
        .route("/api/progress", get(progress))
        .route("/api/export", get(export))
        .route("/api/rubric", get(rubric_text))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub struct ServeOptions {
    pub addr: SocketAddr,
    pub static_dir: Option<PathBuf>,
}

/// Serves until Ctrl-C, then writes a final snapshot.
pub async fn serve(state: Arc<ReviewState>, options: ServeOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(options.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "review server listening");
    let app = router(state.clone(), options.static_dir.as_deref());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    state.snapshot().map_err(std::io::Error::other)
}

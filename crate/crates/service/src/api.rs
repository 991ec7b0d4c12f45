//! HTTP routes over a shared [`Store`].

use std::collections::BTreeSet;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use dialcurate_core::model::{corpus_to_string, Dialogue};
use dialcurate_core::review::rules_manifest;

use crate::golden::{hter_vectors, validation_cases};
use crate::store::{DeleteSubmission, EditSubmission, Store, StoreError, TaskState};

pub const ANNOTATOR_HEADER: &str = "x-annotator";

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<RwLock<Store>>,
    /// When set, only these annotators may claim or submit.
    pub roster: Option<Arc<BTreeSet<String>>>,
}

impl AppState {
    pub fn new(store: Store) -> Self {
        AppState { store: Arc::new(RwLock::new(store)), roster: None }
    }

    pub fn with_roster(mut self, roster: impl IntoIterator<Item = String>) -> Self {
        self.roster = Some(Arc::new(roster.into_iter().collect()));
        self
    }
}

pub struct ApiError(StatusCode, serde_json::Value);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let msg = e.to_string();
        match e {
            StoreError::NotFound(_) => ApiError(StatusCode::NOT_FOUND, json!({"error": msg})),
            StoreError::Conflict(_) => ApiError(StatusCode::CONFLICT, json!({"error": msg})),
            StoreError::Stale { current, .. } => {
                ApiError(StatusCode::CONFLICT, json!({"error": msg, "current_version": current}))
            }
            StoreError::Rejected { report, .. } => {
                ApiError(StatusCode::UNPROCESSABLE_ENTITY, json!({"error": msg, "validation": report}))
            }
            StoreError::BadRequest(_) => ApiError(StatusCode::BAD_REQUEST, json!({"error": msg})),
            StoreError::Io { .. } | StoreError::Corrupt { .. } => {
                ApiError(StatusCode::INTERNAL_SERVER_ERROR, json!({"error": msg}))
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn annotator(app: &AppState, headers: &HeaderMap) -> ApiResult<String> {
    let name = headers
        .get(ANNOTATOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| ApiError(StatusCode::UNAUTHORIZED, json!({"error": "missing x-annotator header"})))?;
    if let Some(roster) = &app.roster {
        if !roster.contains(name) {
            return Err(ApiError(StatusCode::FORBIDDEN, json!({"error": format!("unknown annotator {name:?}")})));
        }
    }
    Ok(name.to_string())
}

fn poisoned() -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, json!({"error": "store lock poisoned"}))
}

fn jsonl(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

#[derive(Deserialize)]
struct ListQuery {
    state: Option<String>,
}

async fn list_tasks(State(app): State<AppState>, Query(q): Query<ListQuery>) -> ApiResult<Response> {
    let filter = q.state.as_deref().map(str::parse::<TaskState>).transpose()?;
    let store = app.store.read().map_err(|_| poisoned())?;
    Ok(Json(store.list(filter)).into_response())
}

async fn get_task(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let store = app.store.read().map_err(|_| poisoned())?;
    Ok(Json(store.fetch(&id)?).into_response())
}

async fn claim(State(app): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<Response> {
    let who = annotator(&app, &headers)?;
    let mut store = app.store.write().map_err(|_| poisoned())?;
    Ok(Json(store.claim(&id, &who)?).into_response())
}

async fn submit(
    State(app): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<EditSubmission>,
) -> ApiResult<Response> {
    let who = annotator(&app, &headers)?;
    let mut store = app.store.write().map_err(|_| poisoned())?;
    Ok(Json(store.submit(&id, &who, body)?).into_response())
}

async fn delete(
    State(app): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<DeleteSubmission>,
) -> ApiResult<Response> {
    let who = annotator(&app, &headers)?;
    let mut store = app.store.write().map_err(|_| poisoned())?;
    Ok(Json(store.delete(&id, &who, body)?).into_response())
}

async fn import(State(app): State<AppState>, Json(body): Json<Vec<Dialogue>>) -> ApiResult<Response> {
    let mut store = app.store.write().map_err(|_| poisoned())?;
    let n = store.import(body)?;
    Ok((StatusCode::CREATED, Json(json!({"imported": n}))).into_response())
}

async fn report(State(app): State<AppState>) -> ApiResult<Response> {
    let store = app.store.read().map_err(|_| poisoned())?;
    Ok(Json(store.state().report()).into_response())
}

async fn export(State(app): State<AppState>) -> ApiResult<Response> {
    let store = app.store.read().map_err(|_| poisoned())?;
    Ok(jsonl(corpus_to_string(&store.state().export())))
}

async fn export_originals(State(app): State<AppState>) -> ApiResult<Response> {
    let store = app.store.read().map_err(|_| poisoned())?;
    Ok(jsonl(corpus_to_string(&store.state().export_originals())))
}

async fn export_timing(State(app): State<AppState>) -> ApiResult<Response> {
    let store = app.store.read().map_err(|_| poisoned())?;
    let mut out = String::new();
    for e in &store.state().timing {
        out.push_str(&serde_json::to_string(e).expect("timing serializes"));
        out.push('\n');
    }
    Ok(jsonl(out))
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/tasks", get(list_tasks))
        .route("/tasks/{id}", get(get_task).put(submit))
        .route("/tasks/{id}/claim", post(claim))
        .route("/tasks/{id}/delete", post(delete))
        .route("/import", post(import))
        .route("/report", get(report))
        .route("/export", get(export))
        .route("/export/originals", get(export_originals))
        .route("/export/timing", get(export_timing))
        .route("/rules", get(|| async { Json(rules_manifest()) }))
        .route("/golden/hter", get(|| async { Json(hter_vectors()) }))
        .route("/golden/validation", get(|| async { Json(validation_cases()) }))
        .with_state(app)
}

/// Serves until ctrl-c, then writes a final snapshot.
pub async fn serve(app: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let store = app.store.clone();
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    let guard = store.read().map_err(|_| std::io::Error::other("store lock poisoned"))?;
    guard.write_snapshot().map_err(std::io::Error::other)
}

//! HTTP service over the assistant and the session log.
//!
//! Routes:
//!
//! - `GET  /api/datasets`
//! - `GET  /api/datasets/{name}/metadata`
//! - `POST /api/sessions`                 `{user}`
//! - `GET  /api/sessions?filter=&user=`
//! - `POST /api/sessions/{id}/messages`   `{user, text, turn_id?}`
//! - `GET  /api/sessions/{id}/events?since=`
//! - `POST /api/sessions/{id}/comments`   `{user, text, target_seq?}`
//!
//! Errors are `{status, code, message}` bodies:
//!
//! | condition                       | status | code                 |
//! |---------------------------------|--------|----------------------|
//! | unknown session                 | 404    | `session_not_found`  |
//! | unknown dataset                 | 404    | `unknown_dataset`    |
//! | unknown route                   | 404    | `not_found`          |
//! | sequence already taken          | 409    | `stale_sequence`     |
//! | comment target does not exist   | 409    | `dangling_reference` |
//! | malformed or incomplete body    | 422    | `malformed_body`     |
//! | log I/O, corrupt log, encoding  | 500    | `internal` + incident id |

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cbi_core::{ChatService, ColumnMeta, EventKind, EventRecord, EventRef, QueryResolution, ReplyKind, ResultValue, SessionError, SessionSummary};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub incident: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> ApiError {
        ApiError {
            status: status.as_u16(),
            code,
            message: message.into(),
            incident: None,
        }
    }

    fn malformed(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "malformed_body", message)
    }

    fn internal(err: &dyn std::fmt::Display) -> ApiError {
        let incident = uuid::Uuid::new_v4().to_string();
        tracing::error!(%incident, "request failed: {err}");
        ApiError {
            incident: Some(incident),
            ..ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "internal error")
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> ApiError {
        match &e {
            SessionError::SessionNotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "session_not_found", e.to_string()),
            SessionError::StaleSequence { .. } => ApiError::new(StatusCode::CONFLICT, "stale_sequence", e.to_string()),
            SessionError::DanglingReference(_) => ApiError::new(StatusCode::CONFLICT, "dangling_reference", e.to_string()),
            SessionError::Io(_) | SessionError::Corrupt { .. } | SessionError::Encode(_) => ApiError::internal(&e),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> ApiError {
        ApiError::malformed(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Serialize)]
pub struct DatasetInfo {
    pub name: String,
    pub description: String,
    pub rows: usize,
    pub columns: usize,
}

#[derive(Debug, Deserialize)]
pub struct NewSession {
    pub user: String,
}

#[derive(Debug, Deserialize)]
pub struct NewMessage {
    pub user: String,
    pub text: String,
    #[serde(default)]
    pub turn_id: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct NewComment {
    pub user: String,
    pub text: String,
    #[serde(default)]
    pub target_seq: Option<u64>,
}

#[derive(Debug, Deserialize)]
pub struct ListParams {
    pub filter: Option<String>,
    pub user: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct EventParams {
    pub since: Option<u64>,
}

/// One assistant turn as returned to clients.
#[derive(Debug, Serialize)]
pub struct AssistantTurn {
    pub session: String,
    pub seq: u64,
    pub turn_id: Option<String>,
    pub replayed: bool,
    pub kind: ReplyKind,
    pub text: String,
    pub command: Option<String>,
    pub suggestions: Vec<String>,
    pub result: Option<ResultValue>,
    pub resolution: Option<QueryResolution>,
}

#[derive(Debug, Serialize)]
pub struct CommentAck {
    pub session: String,
    pub seq: u64,
}

pub fn router(service: Arc<ChatService>) -> Router {
    Router::new()
        .route("/api/datasets", get(datasets))
        .route("/api/datasets/{name}/metadata", get(metadata))
        .route("/api/sessions", post(create_session).get(list_sessions))
        .route("/api/sessions/{id}/messages", post(post_message))
        .route("/api/sessions/{id}/events", get(events))
        .route("/api/sessions/{id}/comments", post(post_comment))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(service)
}

async fn datasets(State(svc): State<Arc<ChatService>>) -> Json<Vec<DatasetInfo>> {
    let a = &svc.assistant;
    let out = a
        .catalog
        .tables
        .iter()
        .filter_map(|t| {
            let data = a.tables.get(&t.name)?;
            Some(DatasetInfo {
                name: t.name.clone(),
                description: t.description.clone(),
                rows: data.row_count(),
                columns: data.columns().len(),
            })
        })
        .collect();
    Json(out)
}

async fn metadata(State(svc): State<Arc<ChatService>>, Path(name): Path<String>) -> ApiResult<Json<Vec<ColumnMeta>>> {
    let a = &svc.assistant;
    if a.catalog.table(&name).is_none() || a.tables.get(&name).is_none() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_dataset", format!("dataset {name} not found")));
    }
    Ok(Json(a.catalog.columns_of(&name).cloned().collect()))
}

fn non_blank(field: &str, value: &str) -> ApiResult<()> {
    if value.trim().is_empty() {
        return Err(ApiError::malformed(format!("{field} must not be empty")));
    }
    Ok(())
}

async fn create_session(
    State(svc): State<Arc<ChatService>>,
    body: Result<Json<NewSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionSummary>)> {
    let Json(body) = body?;
    non_blank("user", &body.user)?;
    Ok((StatusCode::CREATED, Json(svc.store.create_session(&body.user)?)))
}

async fn list_sessions(State(svc): State<Arc<ChatService>>, Query(p): Query<ListParams>) -> Json<Vec<SessionSummary>> {
    Json(svc.store.list(p.filter.as_deref(), p.user.as_deref()))
}

async fn post_message(
    State(svc): State<Arc<ChatService>>,
    Path(id): Path<String>,
    body: Result<Json<NewMessage>, JsonRejection>,
) -> ApiResult<Json<AssistantTurn>> {
    let Json(body) = body?;
    non_blank("user", &body.user)?;
    non_blank("text", &body.text)?;
    let svc2 = svc.clone();
    let turn = tokio::task::spawn_blocking(move || svc2.send(&id, &body.user, &body.text, body.turn_id.as_deref()))
        .await
        .map_err(|e| ApiError::internal(&e))??;
    Ok(Json(assistant_turn(turn.session, turn.replayed, turn.reply, &turn.events)))
}

fn assistant_turn(session: String, replayed: bool, reply: cbi_core::Reply, events: &[EventRecord]) -> AssistantTurn {
    let find = |kind: EventKind| events.iter().find(|e| e.kind == kind);
    let resolution = find(EventKind::Resolution).and_then(|e| serde_json::from_value(e.payload.clone()).ok());
    let turn_id = find(EventKind::UserQuery)
        .and_then(|e| e.payload.get("turn_id"))
        .and_then(|v| v.as_str())
        .map(str::to_string);
    AssistantTurn {
        session,
        seq: find(EventKind::AssistantTurn).map_or(0, |e| e.seq),
        turn_id,
        replayed,
        kind: reply.kind,
        text: reply.text,
        command: reply.command,
        suggestions: reply.suggestions,
        result: reply.result,
        resolution,
    }
}

async fn events(
    State(svc): State<Arc<ChatService>>,
    Path(id): Path<String>,
    Query(p): Query<EventParams>,
) -> ApiResult<Json<Vec<EventRecord>>> {
    Ok(Json(svc.store.events(&id, p.since)?))
}

async fn post_comment(
    State(svc): State<Arc<ChatService>>,
    Path(id): Path<String>,
    body: Result<Json<NewComment>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<CommentAck>)> {
    let Json(body) = body?;
    non_blank("user", &body.user)?;
    non_blank("text", &body.text)?;
    let target = body.target_seq.map(|seq| EventRef {
        session: id.clone(),
        seq,
    });
    let rec = svc.store.comment(&id, &body.user, &body.text, target)?;
    Ok((
        StatusCode::CREATED,
        Json(CommentAck {
            session: rec.session,
            seq: rec.seq,
        }),
    ))
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(service: Arc<ChatService>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

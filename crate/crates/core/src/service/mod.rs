//! HTTP and server-sent-event surface.
//!
//! | Method | Path | Body | Result |
//! |---|---|---|---|
//! | POST | `/sessions` | `{"mode": "dynamic"\|"static"}` | session id |
//! | GET | `/sessions/{id}` | | state snapshot |
//! | POST | `/sessions/{id}/messages` | `{"text"}` | turn id |
//! | PATCH | `/sessions/{id}/turns/{turn}/options/{label}` | `{"value"}` | revision |
//! | POST | `/sessions/{id}/turns/{turn}/options/{label}/pin` | | revision |
//! | POST | `/sessions/{id}/session-options/{label}/unpin` | | revision |
//! | POST | `/sessions/{id}/controls` | `{"utterance"}` | revision |
//! | GET | `/sessions/{id}/session-options` | | canonical JSON |
//! | PUT | `/sessions/{id}/session-options` | option array | revision |
//! | PATCH | `/sessions/{id}/session-options/{label}` | `{"value"}` | revision |
//! | DELETE | `/sessions/{id}/options/{tier}/{label}` | | revision |
//! | GET | `/sessions/{id}/events` | | event stream |
//!
//! Errors are `{"error": Name, "message": ...}` with 404 for unknown ids,
//! 409 for state conflicts and 422 for invalid input.
//!
//! `GET /events` resumes after the `Last-Event-ID` header (or the
//! `last_event_id` query parameter). With `follow=false` it sends the buffered
//! backlog and ends instead of staying open.

mod actor;
mod log;

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::RwLock;

pub use actor::{spawn_session, ActorGone, SessionHandle, Snapshot};
pub use log::{EventLog, Evicted, DEFAULT_RING_CAPACITY};

use crate::backend::CompletionBackend;
use crate::engine::{Command, CommandReply, EngineConfig, SessionMachine};
use crate::events::StreamEvent;
use crate::options::ControlValue;
use crate::session::{Mode, SessionError, Tier};
use crate::store::{DirStore, StoreError};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub default_mode: Mode,
    pub engine: EngineConfig,
    pub store: Option<DirStore>,
    pub ring_capacity: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            default_mode: Mode::Dynamic,
            engine: EngineConfig::default(),
            store: None,
            ring_capacity: DEFAULT_RING_CAPACITY,
        }
    }
}

pub struct Service {
    config: ServiceConfig,
    backend: Arc<dyn CompletionBackend>,
    sessions: RwLock<HashMap<String, SessionHandle>>,
    next_id: AtomicU64,
}

impl Service {
    pub fn new(backend: Arc<dyn CompletionBackend>, config: ServiceConfig) -> Arc<Self> {
        Arc::new(Service {
            config,
            backend,
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    pub async fn create_session(&self, mode: Mode) -> Result<String, ApiError> {
        let mut sessions = self.sessions.write().await;
        let id = loop {
            let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
            let on_disk = self.config.store.as_ref().is_some_and(|s| s.exists(&id));
            if !sessions.contains_key(&id) && !on_disk {
                break id;
            }
        };
        let machine = SessionMachine::new(id.clone(), mode, self.config.engine.clone());
        if let Some(store) = &self.config.store {
            store.persist(machine.state()).map_err(ApiError::store)?;
        }
        let handle = spawn_session(
            machine,
            self.backend.clone(),
            self.config.store.clone(),
            self.config.ring_capacity,
        );
        sessions.insert(id.clone(), handle);
        Ok(id)
    }

    /// Running session, or one revived from the store.
    pub async fn session(&self, id: &str) -> Result<SessionHandle, ApiError> {
        if let Some(h) = self.sessions.read().await.get(id) {
            return Ok(h.clone());
        }
        let store = self.config.store.as_ref().ok_or_else(|| ApiError::unknown_session(id))?;
        let mut sessions = self.sessions.write().await;
        if let Some(h) = sessions.get(id) {
            return Ok(h.clone());
        }
        let state = match store.load(id) {
            Ok(s) => s,
            Err(StoreError::NotFound(_)) | Err(StoreError::InvalidId(_)) => return Err(ApiError::unknown_session(id)),
            Err(e) => return Err(ApiError::store(e)),
        };
        let machine = SessionMachine::restore(state, self.config.engine.clone());
        let handle = spawn_session(
            machine,
            self.backend.clone(),
            self.config.store.clone(),
            self.config.ring_capacity,
        );
        sessions.insert(id.to_string(), handle.clone());
        Ok(handle)
    }

    pub async fn command(&self, id: &str, command: Command) -> Result<CommandReply, ApiError> {
        let handle = self.session(id).await?;
        handle.command(command).await.map_err(ApiError::gone)?.map_err(ApiError::from)
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub name: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, name: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            name: name.to_string(),
            message: message.into(),
        }
    }

    fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "UnknownSession", format!("no session `{id}`"))
    }

    fn gone(e: ActorGone) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "SessionStopped", e.to_string())
    }

    fn store(e: StoreError) -> Self {
        let name = match e {
            StoreError::CorruptRecord { .. } => "CorruptRecord",
            _ => "StoreError",
        };
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, name, e.to_string())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::UnknownTurn(_) | SessionError::UnknownLabel(_) => StatusCode::NOT_FOUND,
            SessionError::Busy
            | SessionError::NotLatestTurn
            | SessionError::StaticMode
            | SessionError::NoTurns
            | SessionError::DuplicateSessionLabel(_)
            | SessionError::DuplicateInlineLabel(_) => StatusCode::CONFLICT,
            SessionError::EmptyPrompt | SessionError::EmptyUtterance | SessionError::Value(_) | SessionError::Parse(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
        };
        ApiError::new(status, e.name(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.name, "message": self.message}))).into_response()
    }
}

type Shared = State<Arc<Service>>;

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(submit))
        .route("/sessions/{id}/turns/{turn}/options/{label}", patch(set_inline))
        .route("/sessions/{id}/turns/{turn}/options/{label}/pin", post(pin))
        .route("/sessions/{id}/session-options/{label}/unpin", post(unpin))
        .route("/sessions/{id}/controls", post(request_controls))
        .route("/sessions/{id}/session-options", get(export).put(import))
        .route("/sessions/{id}/session-options/{label}", patch(set_session))
        .route("/sessions/{id}/options/{tier}/{label}", axum::routing::delete(delete_option))
        .route("/sessions/{id}/events", get(events))
        .with_state(service)
}

#[derive(Deserialize, Default)]
struct CreateBody {
    mode: Option<Mode>,
}

async fn create_session(State(svc): Shared, body: Option<Json<CreateBody>>) -> Result<impl IntoResponse, ApiError> {
    let mode = body.and_then(|Json(b)| b.mode).unwrap_or(svc.config.default_mode);
    let id = svc.create_session(mode).await?;
    Ok((StatusCode::CREATED, Json(json!({"session": id, "mode": mode}))))
}

async fn get_session(State(svc): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let snap = svc.session(&id).await?.snapshot().await.map_err(ApiError::gone)?;
    Ok(Json(json!({"state": snap.state, "busy": snap.busy, "quiescent": snap.quiescent})))
}

#[derive(Deserialize)]
struct TextBody {
    text: String,
}

async fn submit(State(svc): Shared, Path(id): Path<String>, Json(b): Json<TextBody>) -> Result<impl IntoResponse, ApiError> {
    let reply = svc.command(&id, Command::Submit { text: b.text }).await?;
    Ok((StatusCode::CREATED, Json(reply)))
}

#[derive(Deserialize)]
struct ValueBody {
    value: ControlValue,
}

async fn set_inline(
    State(svc): Shared,
    Path((id, turn, label)): Path<(String, u64, String)>,
    Json(b): Json<ValueBody>,
) -> Result<Json<CommandReply>, ApiError> {
    Ok(Json(svc.command(&id, Command::SetInline { turn, label, value: b.value }).await?))
}

async fn pin(
    State(svc): Shared,
    Path((id, turn, label)): Path<(String, u64, String)>,
) -> Result<Json<CommandReply>, ApiError> {
    Ok(Json(svc.command(&id, Command::Pin { turn, label }).await?))
}

async fn unpin(State(svc): Shared, Path((id, label)): Path<(String, String)>) -> Result<Json<CommandReply>, ApiError> {
    Ok(Json(svc.command(&id, Command::Unpin { label }).await?))
}

#[derive(Deserialize)]
struct UtteranceBody {
    utterance: String,
}

async fn request_controls(
    State(svc): Shared,
    Path(id): Path<String>,
    Json(b): Json<UtteranceBody>,
) -> Result<impl IntoResponse, ApiError> {
    let reply = svc.command(&id, Command::RequestControls { utterance: b.utterance }).await?;
    Ok((StatusCode::ACCEPTED, Json(reply)))
}

async fn export(State(svc): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let snap = svc.session(&id).await?.snapshot().await.map_err(ApiError::gone)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], snap.state.export_session_options()))
}

async fn import(State(svc): Shared, Path(id): Path<String>, body: String) -> Result<Json<CommandReply>, ApiError> {
    Ok(Json(svc.command(&id, Command::Import { json: body }).await?))
}

async fn set_session(
    State(svc): Shared,
    Path((id, label)): Path<(String, String)>,
    Json(b): Json<ValueBody>,
) -> Result<Json<CommandReply>, ApiError> {
    Ok(Json(svc.command(&id, Command::SetSession { label, value: b.value }).await?))
}

async fn delete_option(
    State(svc): Shared,
    Path((id, tier, label)): Path<(String, String, String)>,
) -> Result<Json<CommandReply>, ApiError> {
    let tier: Tier = tier
        .parse()
        .map_err(|m: String| ApiError::new(StatusCode::NOT_FOUND, "UnknownTier", m))?;
    Ok(Json(svc.command(&id, Command::Delete { tier, label }).await?))
}

#[derive(Deserialize)]
struct EventsQuery {
    last_event_id: Option<u64>,
    follow: Option<bool>,
}

fn sse_event(e: &StreamEvent) -> Event {
    Event::default()
        .event(e.kind.as_str())
        .id(e.revision.to_string())
        .data(e.to_json())
}

async fn events(
    State(svc): Shared,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let handle = svc.session(&id).await?;
    let from_header = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    let last_seen = from_header.or(q.last_event_id).unwrap_or(0);
    let (backlog, rx) = handle.log.subscribe_after(last_seen).map_err(|e| {
        ApiError::new(
            StatusCode::CONFLICT,
            "EventsEvicted",
            format!("events after {last_seen} are no longer buffered; oldest is {}", e.oldest_available),
        )
    })?;
    let resume_after = backlog.last().map_or(last_seen, |e| e.revision);
    let backlog = stream::iter(backlog.iter().map(sse_event).map(Ok).collect::<Vec<_>>());
    let follow = q.follow.unwrap_or(true);
    // A lagging subscriber stops here; it reconnects with Last-Event-ID.
    let live = stream::unfold((rx, resume_after, follow), |(mut rx, after, follow)| async move {
        if !follow {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok(e) if e.revision <= after => continue,
                Ok(e) => {
                    let next = e.revision;
                    return Some((Ok(sse_event(&e)), (rx, next, follow)));
                }
                Err(_) => return None,
            }
        }
    });
    Ok(Sse::new(backlog.chain(live)).keep_alive(KeepAlive::default()))
}

/// Binds `addr` and serves until the task is dropped.
pub async fn serve(service: Arc<Service>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}

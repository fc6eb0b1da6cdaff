//! Session HTTP API consumed by the chat client.
//!
//! | method | path | body | response |
//! |---|---|---|---|
//! | POST | `/api/sessions` | none | session |
//! | POST | `/api/sessions/{id}/image` | raw image bytes, or multipart with one file part | `{imageRef, state}` |
//! | POST | `/api/sessions/{id}/messages` | `{"text": ...}` | `{turn, state}` |
//! | GET | `/api/sessions/{id}/transcript` | | session with turns |
//! | GET | `/api/sessions/{id}/events` | | server-sent events |
//! | GET | `/api/artifacts/{hash}` | | blob bytes |
//!
//! Errors are `{"error": kind, "message": text}` with 404 (unknown session
//! or artifact), 422 (rejected image, with the reason in `message`), 400
//! (malformed request) or 500.

use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use drape_core::session::{SessionError, SessionManager, SessionUpdate};
use drape_core::store::{ContentHash, StoreError};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast;

/// Largest accepted upload.
pub const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub sessions: Arc<SessionManager>,
    pub updates: broadcast::Sender<(String, SessionUpdate)>,
}

impl AppState {
    /// Wires the manager's observer into a broadcast channel feeding the
    /// event streams.
    pub fn new(sessions: Arc<SessionManager>) -> Self {
        let (updates, _) = broadcast::channel(1024);
        let tx = updates.clone();
        sessions.set_observer(Arc::new(move |id: &str, update: &SessionUpdate| {
            let _ = tx.send((id.to_string(), update.clone()));
        }));
        Self { sessions, updates }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/image", post(attach_image))
        .route("/api/sessions/{id}/messages", post(post_message))
        .route("/api/sessions/{id}/transcript", get(transcript))
        .route("/api/sessions/{id}/events", get(events))
        .route("/api/artifacts/{hash}", get(artifact))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            kind: "bad-request",
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            kind: "internal",
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, kind) = match &e {
            SessionError::NotFound(_) => (StatusCode::NOT_FOUND, "not-found"),
            SessionError::ImageRejected(_) => (StatusCode::UNPROCESSABLE_ENTITY, "image-rejected"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let message = match e {
            SessionError::ImageRejected(reason) => reason,
            other => other.to_string(),
        };
        Self { status, kind, message }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.kind, "message": self.message }))).into_response()
    }
}

/// Runs blocking session work off the async workers.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, SessionError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(ApiError::from)
}

async fn create_session(State(st): State<AppState>) -> Result<impl IntoResponse, ApiError> {
    let sessions = st.sessions.clone();
    let session = blocking(move || sessions.create_session()).await?;
    Ok((StatusCode::CREATED, Json(session)))
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct AttachResponse {
    image_ref: ContentHash,
    state: drape_core::session::SessionState,
}

async fn upload_bytes(req: Request) -> Result<Vec<u8>, ApiError> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    if !is_multipart {
        let body = Bytes::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        return Ok(body.to_vec());
    }
    let mut form = Multipart::from_request(req, &())
        .await
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::bad_request(e.to_string()))? {
        if field.file_name().is_some() || field.name() == Some("image") {
            let data = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
            return Ok(data.to_vec());
        }
    }
    Err(ApiError::bad_request("multipart upload has no image part"))
}

async fn attach_image(
    State(st): State<AppState>,
    Path(id): Path<String>,
    req: Request,
) -> Result<Json<AttachResponse>, ApiError> {
    let bytes = upload_bytes(req).await?;
    let sessions = st.sessions.clone();
    let (image_ref, state) = blocking(move || {
        let image_ref = sessions.attach_image(&id, &bytes)?;
        Ok((image_ref, sessions.get_session(&id)?.state))
    })
    .await?;
    Ok(Json(AttachResponse { image_ref, state }))
}

#[derive(Deserialize)]
struct MessageBody {
    text: String,
}

async fn post_message(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<MessageBody>, axum::extract::rejection::JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(body) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    if body.text.trim().is_empty() {
        return Err(ApiError::bad_request("message text is empty"));
    }
    let sessions = st.sessions.clone();
    let (turn, state) = blocking(move || {
        let turn = sessions.handle_message(&id, &body.text)?;
        Ok((turn, sessions.get_session(&id)?.state))
    })
    .await?;
    Ok(Json(json!({ "turn": turn, "state": state })))
}

async fn transcript(State(st): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let session = st.sessions.get_session(&id)?;
    Ok(Json(session.as_ref().clone()))
}

fn sse_event(update: &SessionUpdate) -> Event {
    let name = match update {
        SessionUpdate::State { .. } => "state",
        SessionUpdate::Turn { .. } => "turn",
        SessionUpdate::Slots { .. } => "slots",
        SessionUpdate::Progress { .. } => "progress",
    };
    Event::default()
        .event(name)
        .data(serde_json::to_string(update).unwrap_or_default())
}

async fn events(
    State(st): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let session = st.sessions.get_session(&id)?;
    let rx = st.updates.subscribe();
    let first = sse_event(&SessionUpdate::State { state: session.state });
    let stream = futures::stream::unfold((Some(first), rx, id), |(first, mut rx, id)| async move {
        if let Some(ev) = first {
            return Some((Ok(ev), (None, rx, id)));
        }
        loop {
            match rx.recv().await {
                Ok((sid, update)) if sid == id => return Some((Ok(sse_event(&update)), (None, rx, id))),
                Ok(_) => continue,
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    let ev = Event::default().event("lagged").data(n.to_string());
                    return Some((Ok(ev), (None, rx, id)));
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

fn media_type(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        "image/png"
    } else if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
        "image/jpeg"
    } else if serde_json::from_slice::<serde::de::IgnoredAny>(bytes).is_ok() {
        "application/json"
    } else {
        "application/octet-stream"
    }
}

async fn artifact(State(st): State<AppState>, Path(hash): Path<String>) -> Result<Response, ApiError> {
    let hash: ContentHash = hash
        .parse()
        .map_err(|_| ApiError::bad_request("artifact ref must be a lowercase SHA-256 hex digest"))?;
    let store = st.sessions.engine().store().clone();
    let bytes = tokio::task::spawn_blocking(move || store.get(&hash))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| match e {
            StoreError::NotFound(h) => ApiError {
                status: StatusCode::NOT_FOUND,
                kind: "not-found",
                message: format!("artifact {h} not found"),
            },
            other => ApiError::internal(other.to_string()),
        })?;
    let mut resp = bytes.clone().into_response();
    let headers = resp.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static(media_type(&bytes)));
    headers.insert(
        header::CACHE_CONTROL,
        HeaderValue::from_static("public, max-age=31536000, immutable"),
    );
    Ok(resp)
}

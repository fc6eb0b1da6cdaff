//! Serves the in-process mock model servers over HTTP, so remote-mode
//! gateways can be exercised end to end.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use drape_core::backend::mock::MockTransport;
use drape_core::backend::TransportError;

use crate::api::MAX_UPLOAD_BYTES;

pub fn router(mock: Arc<MockTransport>) -> Router {
    Router::new()
        .route("/v1/{route}", post(handle))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(mock)
}

fn bad(e: impl std::fmt::Display) -> Response {
    let body = serde_json::json!({ "error": e.to_string() }).to_string();
    (StatusCode::BAD_REQUEST, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn handle(State(mock): State<Arc<MockTransport>>, Path(route): Path<String>, req: Request) -> Response {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let (json, parts) = if is_multipart {
        let mut form = match Multipart::from_request(req, &()).await {
            Ok(f) => f,
            Err(e) => return bad(e),
        };
        let mut json = Vec::new();
        let mut parts = Vec::new();
        loop {
            match form.next_field().await {
                Ok(Some(field)) => {
                    let name = field.name().unwrap_or_default().to_string();
                    match field.bytes().await {
                        Ok(b) if name == "request" => json = b.to_vec(),
                        Ok(b) => parts.push((name, b.to_vec())),
                        Err(e) => return bad(e),
                    }
                }
                Ok(None) => break,
                Err(e) => return bad(e),
            }
        }
        (json, parts)
    } else {
        match Bytes::from_request(req, &()).await {
            Ok(b) => (b.to_vec(), Vec::new()),
            Err(e) => return bad(e),
        }
    };
    let result = tokio::task::spawn_blocking(move || mock.handle(&route, &json, &parts)).await;
    match result {
        Ok(Ok(body)) => ([(header::CONTENT_TYPE, "application/json")], body).into_response(),
        Ok(Err(TransportError::Status { code, body })) => (
            StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            [(header::CONTENT_TYPE, "application/json")],
            body,
        )
            .into_response(),
        Ok(Err(other)) => (StatusCode::INTERNAL_SERVER_ERROR, other.to_string()).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

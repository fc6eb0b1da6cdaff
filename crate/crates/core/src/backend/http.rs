use std::sync::OnceLock;
use std::time::Duration;

use reqwest::blocking::{multipart, Client};

use super::{BackendDescriptor, Transport, TransportError, WireRequest};

/// Blocking HTTP transport. Bodies are `application/json`, or
/// `multipart/form-data` with a `request` JSON part when images travel as
/// parts. Must not be driven from inside an async runtime thread.
#[derive(Default)]
pub struct HttpTransport {
    client: OnceLock<Client>,
}

impl HttpTransport {
    pub fn new() -> Self {
        Self::default()
    }

    fn client(&self) -> &Client {
        self.client.get_or_init(Client::new)
    }
}

impl Transport for HttpTransport {
    fn send(&self, descriptor: &BackendDescriptor, request: &WireRequest) -> Result<Vec<u8>, TransportError> {
        let url = format!("{}/v1/{}", descriptor.endpoint.trim_end_matches('/'), request.route);
        let builder = self
            .client()
            .post(&url)
            .timeout(Duration::from_secs_f64(descriptor.timeout_secs));
        let builder = if request.parts.is_empty() {
            builder
                .header(reqwest::header::CONTENT_TYPE, "application/json")
                .body(request.json.clone())
        } else {
            let json_part = multipart::Part::bytes(request.json.clone())
                .mime_str("application/json")
                .map_err(|e| TransportError::Io(e.to_string()))?;
            let mut form = multipart::Form::new().part("request", json_part);
            for (name, bytes) in &request.parts {
                let part = multipart::Part::bytes(bytes.clone())
                    .file_name(format!("{name}.png"))
                    .mime_str("image/png")
                    .map_err(|e| TransportError::Io(e.to_string()))?;
                form = form.part(name.clone(), part);
            }
            builder.multipart(form)
        };
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout(e.to_string())
            } else {
                TransportError::Io(e.to_string())
            }
        })?;
        let status = resp.status();
        let body = resp.bytes().map_err(|e| TransportError::Io(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportError::Status {
                code: status.as_u16(),
                body: String::from_utf8_lossy(&body).chars().take(512).collect(),
            });
        }
        Ok(body.to_vec())
    }
}

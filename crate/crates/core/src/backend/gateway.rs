use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mock::MockTransport;
use super::wire::{
    ChatRequest, GenerateRequest, ImageRequest, LabelMapResponse, RasterResponse, SegRequest,
    TextResponse, VqaRequest, WireCondition, WireImage,
};
use super::{
    BackendDescriptor, BackendError, Capability, ChatMessage, ChatModel, EdgeExtractor,
    GatewayConfig, GatewaySettings, Generator, HttpTransport, HumanParser, Matter, Mode,
    PoseEstimator, Segmenter, VisualQa,
};
use crate::imaging;
use crate::mask::{decode_label_map_png, decode_mask_png, decode_matte_png, encode_mask_png, AlphaMatte, BinaryMask, LabelMap};
use crate::planner::{Condition, GenerationJob};
use crate::store::{sha256_hex, BlobStore, ContentHash};

/// One serialized request: JSON body plus any multipart image parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireRequest {
    pub route: &'static str,
    pub json: Vec<u8>,
    pub parts: Vec<(String, Vec<u8>)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("transport: {0}")]
    Io(String),
}

impl TransportError {
    pub fn status(&self) -> Option<u16> {
        match self {
            TransportError::Status { code, .. } => Some(*code),
            _ => None,
        }
    }

    pub fn retryable(&self) -> bool {
        match self {
            TransportError::Status { code, .. } => *code >= 500 || *code == 429 || *code == 408,
            TransportError::Timeout(_) | TransportError::Io(_) => true,
        }
    }
}

/// Moves request bytes to a model server and returns the response body.
pub trait Transport: Send + Sync {
    fn send(&self, descriptor: &BackendDescriptor, request: &WireRequest) -> Result<Vec<u8>, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CallOutcome {
    Ok,
    HttpStatus { status: u16 },
    Timeout,
    TransportFailure { message: String },
    ProtocolError { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendCallRecord {
    pub capability: Capability,
    /// SHA-256 of the JSON request body.
    pub request_digest: String,
    pub latency_ms: f64,
    /// 1-based attempt number within the call.
    pub attempt: u32,
    pub outcome: CallOutcome,
}

struct Limiter {
    cap: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Client for every capability, routing each to its remote or mock transport.
pub struct Gateway {
    descriptors: BTreeMap<Capability, BackendDescriptor>,
    settings: GatewaySettings,
    store: Arc<BlobStore>,
    remote: Arc<dyn Transport>,
    mock: Arc<dyn Transport>,
    limiters: BTreeMap<Capability, Limiter>,
    records: Mutex<Vec<BackendCallRecord>>,
}

impl Gateway {
    /// Uses [`HttpTransport`] for remote capabilities and a [`MockTransport`]
    /// loaded from `config.mock_scenario` (or the built-in scenario).
    pub fn new(config: GatewayConfig, store: Arc<BlobStore>) -> Result<Self, BackendError> {
        let mock = match &config.mock_scenario {
            Some(path) => MockTransport::from_file(path).map_err(BackendError::Unavailable)?,
            None => MockTransport::builtin(),
        };
        Self::with_transports(config, store, Arc::new(HttpTransport::new()), Arc::new(mock))
    }

    pub fn with_transports(
        config: GatewayConfig,
        store: Arc<BlobStore>,
        remote: Arc<dyn Transport>,
        mock: Arc<dyn Transport>,
    ) -> Result<Self, BackendError> {
        config.validate().map_err(BackendError::Unavailable)?;
        let limiters = Capability::ALL
            .into_iter()
            .map(|c| (c, Limiter::new(config.settings.inflight_cap)))
            .collect();
        Ok(Self {
            descriptors: config.backends.into_iter().map(|d| (d.capability, d)).collect(),
            settings: config.settings,
            store,
            remote,
            mock,
            limiters,
            records: Mutex::new(Vec::new()),
        })
    }

    pub fn store(&self) -> &Arc<BlobStore> {
        &self.store
    }

    pub fn descriptor(&self, capability: Capability) -> Option<&BackendDescriptor> {
        self.descriptors.get(&capability)
    }

    /// Snapshot of every attempt so far, in completion order.
    pub fn records(&self) -> Vec<BackendCallRecord> {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Number of attempts made against `capability`.
    pub fn call_count(&self, capability: Capability) -> usize {
        self.records
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .filter(|r| r.capability == capability)
            .count()
    }

    fn record(&self, rec: BackendCallRecord) {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).push(rec);
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .settings
            .backoff_base_ms
            .saturating_mul(1u64 << (attempt - 1).min(20))
            .min(self.settings.backoff_max_ms);
        Duration::from_millis(ms)
    }

    fn wire_image(&self, name: &str, png: &[u8], parts: &mut Vec<(String, Vec<u8>)>) -> WireImage {
        if png.len().div_ceil(3) * 4 <= self.settings.inline_limit_bytes {
            WireImage::inline(png)
        } else {
            parts.push((name.to_string(), png.to_vec()));
            WireImage::Multipart { part: name.to_string() }
        }
    }

    fn source_image(&self, image: &ContentHash) -> Result<(Vec<u8>, (u32, u32)), BackendError> {
        let bytes = self.store.get(image)?;
        let dims = imaging::image_dims(&bytes).map_err(|e| BackendError::Unavailable(format!("source image {image}: {e}")))?;
        Ok((bytes, dims))
    }

    /// Sends with retries. `decode` turns a parsed response into the result;
    /// its failures are protocol errors and are not retried.
    fn call<Req, Resp, R>(
        &self,
        capability: Capability,
        body: &Req,
        parts: Vec<(String, Vec<u8>)>,
        decode: impl Fn(Resp) -> Result<R, String>,
    ) -> Result<R, BackendError>
    where
        Req: Serialize,
        Resp: DeserializeOwned,
    {
        let descriptor = self
            .descriptors
            .get(&capability)
            .ok_or(BackendError::NotConfigured(capability))?;
        let transport = match descriptor.mode {
            Mode::Remote => &self.remote,
            Mode::Mock => &self.mock,
        };
        let json = serde_json::to_vec(body).map_err(|e| BackendError::Protocol {
            capability,
            message: e.to_string(),
        })?;
        let request = WireRequest {
            route: capability.route(),
            json,
            parts,
        };
        let digest = sha256_hex(&request.json);
        let limiter = &self.limiters[&capability];
        let max_attempts = descriptor.max_retries + 1;

        for attempt in 1..=max_attempts {
            let started = Instant::now();
            let sent = {
                let _permit = limiter.acquire();
                transport.send(descriptor, &request)
            };
            let mut rec = BackendCallRecord {
                capability,
                request_digest: digest.clone(),
                latency_ms: 0.0,
                attempt,
                outcome: CallOutcome::Ok,
            };
            match sent {
                Ok(bytes) => {
                    let decoded = serde_json::from_slice::<Resp>(&bytes)
                        .map_err(|e| format!("malformed response: {e}"))
                        .and_then(&decode);
                    rec.latency_ms = started.elapsed().as_secs_f64() * 1e3;
                    return match decoded {
                        Ok(value) => {
                            self.record(rec);
                            Ok(value)
                        }
                        Err(message) => {
                            rec.outcome = CallOutcome::ProtocolError { message: message.clone() };
                            self.record(rec);
                            Err(BackendError::Protocol { capability, message })
                        }
                    };
                }
                Err(err) => {
                    rec.latency_ms = started.elapsed().as_secs_f64() * 1e3;
                    rec.outcome = match &err {
                        TransportError::Status { code, .. } => CallOutcome::HttpStatus { status: *code },
                        TransportError::Timeout(_) => CallOutcome::Timeout,
                        TransportError::Io(m) => CallOutcome::TransportFailure { message: m.clone() },
                    };
                    self.record(rec);
                    if err.retryable() && attempt < max_attempts {
                        tracing::debug!(%capability, attempt, error = %err, "retrying backend call");
                        std::thread::sleep(self.backoff(attempt));
                        continue;
                    }
                    return Err(BackendError::Exhausted {
                        capability,
                        last_status: err.status(),
                        attempts: attempt,
                        message: err.to_string(),
                    });
                }
            }
        }
        unreachable!("max_attempts is at least 1")
    }
}

fn check_hash(bytes: &[u8], claimed: &str) -> Result<(), String> {
    let actual = sha256_hex(bytes);
    if actual == claimed.to_ascii_lowercase() {
        Ok(())
    } else {
        Err(format!("content_sha256 mismatch: claimed {claimed}, computed {actual}"))
    }
}

fn check_dims(what: &str, got: (u32, u32), declared: (u32, u32), source: (u32, u32)) -> Result<(), String> {
    if got != declared {
        return Err(format!("{what} is {got:?} but response declares {declared:?}"));
    }
    if got != source {
        return Err(format!("{what} is {got:?} but the source image is {source:?}"));
    }
    Ok(())
}

fn raster_png(resp: &RasterResponse) -> Result<Vec<u8>, String> {
    let png = resp
        .payload()
        .ok_or("response carries no image payload")?
        .resolve(&[])?;
    check_hash(&png, &resp.content_sha256)?;
    Ok(png)
}

fn text_result(resp: TextResponse) -> Result<String, String> {
    check_hash(resp.text.as_bytes(), &resp.content_sha256)?;
    Ok(resp.text)
}

impl Gateway {
    fn label_map_call(&self, capability: Capability, image: &ContentHash) -> Result<LabelMap, BackendError> {
        let (bytes, source) = self.source_image(image)?;
        let mut parts = Vec::new();
        let body = ImageRequest {
            image: self.wire_image("image", &bytes, &mut parts),
        };
        self.call(capability, &body, parts, |resp: LabelMapResponse| {
            let png = resp.label_map.resolve(&[])?;
            check_hash(&png, &resp.content_sha256)?;
            let lm = decode_label_map_png(&png, resp.vocabulary).map_err(|e| e.to_string())?;
            check_dims("label map", lm.dims(), (resp.width, resp.height), source)?;
            Ok(lm)
        })
    }
}

impl ChatModel for Gateway {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let body = ChatRequest {
            messages: messages.to_vec(),
        };
        self.call(Capability::Chat, &body, Vec::new(), text_result)
    }
}

impl VisualQa for Gateway {
    fn ask(&self, image: &ContentHash, question: &str) -> Result<String, BackendError> {
        let (bytes, _) = self.source_image(image)?;
        let mut parts = Vec::new();
        let body = VqaRequest {
            image: self.wire_image("image", &bytes, &mut parts),
            question: question.to_string(),
        };
        self.call(Capability::Vqa, &body, parts, text_result)
    }
}

impl HumanParser for Gateway {
    fn parse_human(&self, image: &ContentHash) -> Result<LabelMap, BackendError> {
        self.label_map_call(Capability::HumanParsing, image)
    }
}

impl PoseEstimator for Gateway {
    fn pose_parts(&self, image: &ContentHash) -> Result<LabelMap, BackendError> {
        self.label_map_call(Capability::PoseParts, image)
    }
}

impl Segmenter for Gateway {
    fn segment(&self, image: &ContentHash, phrase: &str) -> Result<BinaryMask, BackendError> {
        let (bytes, source) = self.source_image(image)?;
        let mut parts = Vec::new();
        let body = SegRequest {
            image: self.wire_image("image", &bytes, &mut parts),
            phrase: phrase.to_string(),
        };
        self.call(Capability::OpenVocabSeg, &body, parts, |resp: RasterResponse| {
            let mask = decode_mask_png(&raster_png(&resp)?).map_err(|e| e.to_string())?;
            check_dims("mask", mask.dims(), (resp.width, resp.height), source)?;
            Ok(mask)
        })
    }
}

impl Matter for Gateway {
    fn matte(&self, image: &ContentHash) -> Result<AlphaMatte, BackendError> {
        let (bytes, source) = self.source_image(image)?;
        let mut parts = Vec::new();
        let body = ImageRequest {
            image: self.wire_image("image", &bytes, &mut parts),
        };
        self.call(Capability::Matting, &body, parts, |resp: RasterResponse| {
            let matte = decode_matte_png(&raster_png(&resp)?).map_err(|e| e.to_string())?;
            check_dims("matte", matte.dims(), (resp.width, resp.height), source)?;
            Ok(matte)
        })
    }
}

impl EdgeExtractor for Gateway {
    fn edges(&self, image: &ContentHash) -> Result<ContentHash, BackendError> {
        let (bytes, source) = self.source_image(image)?;
        let mut parts = Vec::new();
        let body = ImageRequest {
            image: self.wire_image("image", &bytes, &mut parts),
        };
        let png = self.call(Capability::Edge, &body, parts, |resp: RasterResponse| {
            let png = raster_png(&resp)?;
            let dims = imaging::image_dims(&png).map_err(|e| e.to_string())?;
            check_dims("edge map", dims, (resp.width, resp.height), source)?;
            Ok(png)
        })?;
        Ok(self.store.put(&png)?)
    }
}

impl Generator for Gateway {
    fn generate(&self, job: &GenerationJob) -> Result<ContentHash, BackendError> {
        let (bytes, source) = self.source_image(&job.image_ref)?;
        if job.mask.dims() != source {
            return Err(BackendError::Protocol {
                capability: Capability::GuidedGeneration,
                message: format!("mask is {:?} but the source image is {source:?}", job.mask.dims()),
            });
        }
        let mask_png = encode_mask_png(&job.mask).map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let mut parts = Vec::new();
        let condition = match &job.condition {
            Condition::Inpaint => WireCondition::Inpaint,
            Condition::InpaintEdge { edge_ref } => {
                let edge = self.store.get(edge_ref)?;
                WireCondition::InpaintEdge {
                    edge: self.wire_image("edge", &edge, &mut parts),
                    edge_sha256: edge_ref.to_string(),
                }
            }
        };
        let body = GenerateRequest {
            image: self.wire_image("image", &bytes, &mut parts),
            mask: self.wire_image("mask", &mask_png, &mut parts),
            prompt: job.prompt.text.clone(),
            negative_prompt: job.prompt.negative_text.clone(),
            condition,
            seed: job.seed,
            strength: job.params.strength,
            guidance_scale: job.params.guidance_scale,
            steps: job.params.steps,
        };
        let png = self.call(Capability::GuidedGeneration, &body, parts, |resp: RasterResponse| {
            let png = raster_png(&resp)?;
            let dims = imaging::image_dims(&png).map_err(|e| e.to_string())?;
            check_dims("generated image", dims, (resp.width, resp.height), source)?;
            Ok(png)
        })?;
        Ok(self.store.put(&png)?)
    }
}

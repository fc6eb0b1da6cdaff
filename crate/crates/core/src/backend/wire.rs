//! JSON bodies for the `/v1/{capability}` routes. `docs/wire-protocol.md`
//! documents the same shapes for server implementers.
//!
//! Every response carries `content_sha256`, the hex SHA-256 of its payload:
//! the UTF-8 text for `chat`/`vqa`, the PNG bytes for everything else.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::ChatMessage;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "kebab-case")]
pub enum WireImage {
    PngBase64 { data: String },
    /// Bytes travel in the multipart part of this name.
    Multipart { part: String },
}

impl WireImage {
    pub fn inline(png: &[u8]) -> Self {
        WireImage::PngBase64 {
            data: B64.encode(png),
        }
    }

    pub fn resolve(&self, parts: &[(String, Vec<u8>)]) -> Result<Vec<u8>, String> {
        match self {
            WireImage::PngBase64 { data } => B64.decode(data).map_err(|e| format!("bad base64: {e}")),
            WireImage::Multipart { part } => parts
                .iter()
                .find(|(name, _)| name == part)
                .map(|(_, bytes)| bytes.clone())
                .ok_or_else(|| format!("missing multipart part `{part}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaRequest {
    pub image: WireImage,
    pub question: String,
}

/// Body for `human-parsing`, `pose-parts`, `matting` and `edge`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRequest {
    pub image: WireImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegRequest {
    pub image: WireImage,
    pub phrase: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum WireCondition {
    #[serde(rename = "inpaint")]
    Inpaint,
    #[serde(rename = "inpaint+edge")]
    InpaintEdge { edge: WireImage, edge_sha256: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub image: WireImage,
    pub mask: WireImage,
    pub prompt: String,
    pub negative_prompt: String,
    pub condition: WireCondition,
    pub seed: u64,
    pub strength: f32,
    pub guidance_scale: f32,
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextResponse {
    pub text: String,
    pub content_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMapResponse {
    pub label_map: WireImage,
    pub vocabulary: Vec<String>,
    pub width: u32,
    pub height: u32,
    pub content_sha256: String,
}

/// Response for `seg` (`mask`), `matting` (`matte`), `edge` and `generate`
/// (`image`); exactly one PNG field is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterResponse {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mask: Option<WireImage>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub matte: Option<WireImage>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub image: Option<WireImage>,
    pub width: u32,
    pub height: u32,
    pub content_sha256: String,
}

impl RasterResponse {
    pub fn payload(&self) -> Option<&WireImage> {
        self.mask.as_ref().or(self.matte.as_ref()).or(self.image.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

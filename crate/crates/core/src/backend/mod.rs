//! Model backends.
//!
//! Each external model capability is reached through a narrow trait
//! ([`ChatModel`], [`Segmenter`], ...). The [`Gateway`] implements all of
//! them over one JSON wire protocol, either against remote model servers or
//! against the in-process [`mock::MockTransport`]. Tests substitute single
//! capabilities with closures or small structs.

mod descriptor;
mod gateway;
mod http;
pub mod mock;
pub mod wire;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{AlphaMatte, BinaryMask, LabelMap};
use crate::planner::GenerationJob;
use crate::store::{ContentHash, StoreError};

pub use descriptor::{BackendDescriptor, GatewayConfig, GatewaySettings, Mode};
pub use gateway::{BackendCallRecord, CallOutcome, Gateway, Transport, TransportError, WireRequest};
pub use http::HttpTransport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Capability {
    Chat,
    Vqa,
    HumanParsing,
    PoseParts,
    OpenVocabSeg,
    Matting,
    Edge,
    GuidedGeneration,
}

impl Capability {
    pub const ALL: [Capability; 8] = [
        Capability::Chat,
        Capability::Vqa,
        Capability::HumanParsing,
        Capability::PoseParts,
        Capability::OpenVocabSeg,
        Capability::Matting,
        Capability::Edge,
        Capability::GuidedGeneration,
    ];

    /// Path segment under `/v1/`.
    pub fn route(self) -> &'static str {
        match self {
            Capability::Chat => "chat",
            Capability::Vqa => "vqa",
            Capability::HumanParsing => "human-parsing",
            Capability::PoseParts => "pose-parts",
            Capability::OpenVocabSeg => "seg",
            Capability::Matting => "matting",
            Capability::Edge => "edge",
            Capability::GuidedGeneration => "generate",
        }
    }

    pub fn from_route(route: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.route() == route)
    }

    pub fn name(self) -> &'static str {
        match self {
            Capability::Chat => "chat",
            Capability::Vqa => "vqa",
            Capability::HumanParsing => "human-parsing",
            Capability::PoseParts => "pose-parts",
            Capability::OpenVocabSeg => "open-vocab-seg",
            Capability::Matting => "matting",
            Capability::Edge => "edge",
            Capability::GuidedGeneration => "guided-generation",
        }
    }

    /// `DRAPE_<NAME>_ENDPOINT`, e.g. `DRAPE_OPEN_VOCAB_SEG_ENDPOINT`.
    pub fn endpoint_env_var(self) -> String {
        format!(
            "DRAPE_{}_ENDPOINT",
            self.name().replace('-', "_").to_uppercase()
        )
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{capability} backend failed after {attempts} attempt(s) (last status {last_status:?}): {message}")]
    Exhausted {
        capability: Capability,
        last_status: Option<u16>,
        attempts: u32,
        message: String,
    },
    #[error("{capability} protocol error: {message}")]
    Protocol {
        capability: Capability,
        message: String,
    },
    #[error("{0} backend is not configured")]
    NotConfigured(Capability),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl BackendError {
    pub fn capability(&self) -> Option<Capability> {
        match self {
            BackendError::Exhausted { capability, .. } | BackendError::Protocol { capability, .. } => {
                Some(*capability)
            }
            BackendError::NotConfigured(c) => Some(*c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

pub trait ChatModel: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError>;
}

impl<F> ChatModel for F
where
    F: Fn(&[ChatMessage]) -> Result<String, BackendError> + Send + Sync,
{
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        self(messages)
    }
}

pub trait VisualQa: Send + Sync {
    fn ask(&self, image: &ContentHash, question: &str) -> Result<String, BackendError>;
}

pub trait HumanParser: Send + Sync {
    fn parse_human(&self, image: &ContentHash) -> Result<LabelMap, BackendError>;
}

pub trait PoseEstimator: Send + Sync {
    fn pose_parts(&self, image: &ContentHash) -> Result<LabelMap, BackendError>;
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, image: &ContentHash, phrase: &str) -> Result<BinaryMask, BackendError>;
}

pub trait Matter: Send + Sync {
    fn matte(&self, image: &ContentHash) -> Result<AlphaMatte, BackendError>;
}

pub trait EdgeExtractor: Send + Sync {
    /// Returns the stored 8-bit grayscale edge map.
    fn edges(&self, image: &ContentHash) -> Result<ContentHash, BackendError>;
}

pub trait Generator: Send + Sync {
    /// Returns the stored result image.
    fn generate(&self, job: &GenerationJob) -> Result<ContentHash, BackendError>;
}

/// One handle per capability. Usually all point at the same [`Gateway`].
#[derive(Clone)]
pub struct Backends {
    pub chat: Arc<dyn ChatModel>,
    pub vqa: Arc<dyn VisualQa>,
    pub parser: Arc<dyn HumanParser>,
    pub pose: Arc<dyn PoseEstimator>,
    pub segmenter: Arc<dyn Segmenter>,
    pub matting: Arc<dyn Matter>,
    pub edge: Arc<dyn EdgeExtractor>,
    pub generator: Arc<dyn Generator>,
}

impl Backends {
    pub fn from_gateway(gateway: Arc<Gateway>) -> Self {
        Self {
            chat: gateway.clone(),
            vqa: gateway.clone(),
            parser: gateway.clone(),
            pose: gateway.clone(),
            segmenter: gateway.clone(),
            matting: gateway.clone(),
            edge: gateway.clone(),
            generator: gateway,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routes_roundtrip() {
        for c in Capability::ALL {
            assert_eq!(Capability::from_route(c.route()), Some(c));
        }
        assert_eq!(Capability::OpenVocabSeg.endpoint_env_var(), "DRAPE_OPEN_VOCAB_SEG_ENDPOINT");
        assert_eq!(
            serde_json::to_string(&Capability::GuidedGeneration).unwrap(),
            "\"guided-generation\""
        );
    }
}

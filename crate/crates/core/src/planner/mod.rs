//! Turning a free-text requirement into executed edits.
//!
//! A requirement is split into clauses, each clause classified into an
//! [`EditTask`], and tasks run in order: mask, prompt, generation job.
//! Each task edits the previous task's output.
//!
//! Every language-model exchange asks for one line in a fixed format. A
//! reply that does not parse is retried once; after that, or on a backend
//! failure, a deterministic rule-based path takes over and the result is
//! marked [`Derivation::Fallback`].

mod classify;
mod execute;
mod prompt;
mod split;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automask::AutomaskError;
use crate::backend::{BackendError, ChatMessage, ChatModel};
use crate::mask::BinaryMask;
use crate::store::{ContentHash, StoreError};

pub use classify::{
    classify_prompt, classify_task, classify_with_model, classify_with_rules, is_color_phrase, ModelClassifyFailure,
};
pub use execute::{
    plan_generation, Classified, CosegSource, ExecutionReport, JobRecord, Planner, PlannerConfig, ProgressEvent,
    TaskFailure, TaskOutcome,
};
pub use prompt::{standardize_prompt, template_prompt, vqa_question};
pub use split::{split_deterministic, split_prompt, split_requirements, split_with_model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Replacement,
    Recoloring,
    Addition,
    Removal,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Replacement,
        Category::Recoloring,
        Category::Addition,
        Category::Removal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Replacement => "replacement",
            Category::Recoloring => "recoloring",
            Category::Addition => "addition",
            Category::Removal => "removal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn needs_source(self) -> bool {
        !matches!(self, Category::Addition)
    }

    pub fn needs_target(self) -> bool {
        !matches!(self, Category::Removal)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How a planner result was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Derivation {
    Model,
    Fallback,
}

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("{0} is empty")]
    EmptyInput(&'static str),
    #[error("could not understand \"{clause}\": {reason}")]
    Classification { clause: String, reason: String },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("the request produced no tasks")]
    EmptyPlan,
    #[error("generation pipeline: {0}")]
    Pipeline(String),
    #[error(transparent)]
    Mask(#[from] AutomaskError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("job log: {0}")]
    JobLog(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRequest {
    pub text: String,
    pub image_ref: ContentHash,
}

/// One atomic edit. Removal has only a source, Addition only a target,
/// Replacement and Recoloring both (for Recoloring the target names the
/// new appearance of the source, e.g. "red pants").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditTask {
    pub category: Category,
    pub source_desc: Option<String>,
    pub target_desc: Option<String>,
    pub raw_text: String,
}

impl EditTask {
    pub fn new(
        category: Category,
        source_desc: Option<String>,
        target_desc: Option<String>,
        raw_text: impl Into<String>,
    ) -> Result<Self, PlannerError> {
        let task = Self {
            category,
            source_desc,
            target_desc,
            raw_text: raw_text.into(),
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        let present = |d: &Option<String>| d.as_deref().is_some_and(|s| !s.trim().is_empty());
        let (src, tgt) = (present(&self.source_desc), present(&self.target_desc));
        if src != self.category.needs_source() || tgt != self.category.needs_target() {
            return Err(PlannerError::InvalidTask(format!(
                "{} needs {}source and {}target description",
                self.category,
                if self.category.needs_source() { "a " } else { "no " },
                if self.category.needs_target() { "a " } else { "no " },
            )));
        }
        Ok(())
    }

    /// `t_o`; empty for Addition.
    pub fn source(&self) -> &str {
        self.source_desc.as_deref().unwrap_or("")
    }

    /// `t_e`; empty for Removal.
    pub fn target(&self) -> &str {
        self.target_desc.as_deref().unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaExchange {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationPrompt {
    pub text: String,
    pub negative_text: String,
    pub source_details: Vec<VqaExchange>,
    pub derivation: Derivation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Condition {
    #[serde(rename = "inpaint")]
    Inpaint,
    #[serde(rename = "inpaint+edge")]
    InpaintEdge { edge_ref: ContentHash },
}

impl Condition {
    pub fn name(&self) -> &'static str {
        match self {
            Condition::Inpaint => "inpaint",
            Condition::InpaintEdge { .. } => "inpaint+edge",
        }
    }
}

/// Sampler settings passed through to the generator. The defaults are
/// common inpainting settings, not tuned values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub strength: f32,
    pub guidance_scale: f32,
    pub steps: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            strength: 1.0,
            guidance_scale: 7.5,
            steps: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationJob {
    pub category: Category,
    pub image_ref: ContentHash,
    pub mask: BinaryMask,
    pub prompt: GenerationPrompt,
    pub condition: Condition,
    pub seed: u64,
    pub params: GenerationParams,
}

/// Asks for a single formatted line, retrying once when `parse` rejects
/// the reply. `Err(None)` means the backend failed; `Err(Some(reply))` that
/// both replies were off-format.
pub(crate) fn ask_line<T>(
    model: &dyn ChatModel,
    messages: &[ChatMessage],
    parse: impl Fn(&str) -> Option<T>,
) -> Result<T, Option<String>> {
    let mut convo = messages.to_vec();
    for attempt in 0..2 {
        let reply = match model.complete(&convo) {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(error = %e, "language model unavailable");
                return Err(None);
            }
        };
        if let Some(v) = single_line(&reply).and_then(&parse) {
            return Ok(v);
        }
        if attempt == 1 {
            return Err(Some(reply));
        }
        tracing::debug!(reply = %reply, "off-format reply, retrying once");
        convo.push(ChatMessage {
            role: crate::backend::Role::Assistant,
            content: reply,
        });
        convo.push(ChatMessage::user(
            "That reply did not follow the required format. Answer again on exactly one line in the required format.",
        ));
    }
    unreachable!()
}

/// The reply's only non-empty line, trimmed.
pub(crate) fn single_line(reply: &str) -> Option<&str> {
    let mut lines = reply.lines().map(str::trim).filter(|l| !l.is_empty());
    let line = lines.next()?;
    lines.next().is_none().then_some(line)
}

//! Task-specific editing masks.
//!
//! | category    | mask                                   |
//! |-------------|----------------------------------------|
//! | removal     | `dilate(m_o)`                          |
//! | recoloring  | `binarize(matte(I)) ∩ m_o`             |
//! | replacement | `dilate(m_o ∪ occluded parts of t_e)`  |
//! | addition    | `dilate(∪ occluded parts of t_e)`      |
//!
//! `m_o` is the cosegmentation entry named by `t_o`, or the open-vocabulary
//! segmentation of `t_o` when no entry matches.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Backends, ChatMessage, ChatModel, Matter, Segmenter};
use crate::coseg::{lookup, CoSegmentation, SynonymTable};
use crate::mask::{
    binarize, default_dilation_radius, dilate_maxpool, encode_mask_png, intersect, union, BinaryMask,
    MaskError,
};
use crate::planner::{Category, EditTask};
use crate::store::{BlobStore, ContentHash, StoreError};
use crate::text;

#[derive(Debug, Error)]
pub enum AutomaskError {
    #[error("could not find `{0}` in the image")]
    SourceNotFound(String),
    #[error("the source mask is empty")]
    EmptyMask,
    #[error("the matte and the source region do not overlap")]
    DegenerateMask,
    #[error("no place to put `{0}` on the person")]
    PlacementNotFound(String),
    #[error("task is malformed: {0}")]
    InvalidTask(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceProvenance {
    CosegLookup,
    OpenVocabFallback,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccludedPart {
    pub label: String,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceMask {
    /// Matched cosegmentation label, absent for the segmentation fallback.
    pub label: Option<String>,
    pub mask: BinaryMask,
    pub provenance: SourceProvenance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub category: Category,
    pub mask: BinaryMask,
    pub source: Option<SourceMask>,
    pub occluded_parts: Vec<OccludedPart>,
    pub dilation_radius: u32,
}

impl MaskPlan {
    pub fn source_mask(&self) -> Option<&BinaryMask> {
        self.source.as_ref().map(|s| &s.mask)
    }

    pub fn source_provenance(&self) -> SourceProvenance {
        self.source
            .as_ref()
            .map(|s| s.provenance)
            .unwrap_or(SourceProvenance::NotApplicable)
    }

    pub fn occluded_labels(&self) -> Vec<String> {
        self.occluded_parts.iter().map(|p| p.label.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionRule {
    #[serde(rename = "match")]
    pub matchers: Vec<String>,
    pub labels: Vec<String>,
}

/// Which body/garment regions a new item may cover, matched against the
/// item description by whole-token phrases.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OcclusionRuleTable {
    pub rules: Vec<OcclusionRule>,
}

impl OcclusionRuleTable {
    /// Labels of every rule with a matcher in `t_e`, in table order, deduplicated.
    pub fn labels_for(&self, t_e: &str) -> Vec<String> {
        let toks = text::tokens(t_e);
        let singular: Vec<String> = toks.iter().map(|t| text::singularize_word(t)).collect();
        let mut out: Vec<String> = Vec::new();
        for rule in &self.rules {
            let hit = rule.matchers.iter().any(|m| {
                let needle = text::tokens(m);
                text::contains_phrase(&toks, &needle) || text::contains_phrase(&singular, &needle)
            });
            if hit {
                for l in &rule.labels {
                    if !out.contains(l) {
                        out.push(l.clone());
                    }
                }
            }
        }
        out
    }
}

/// Looks `t_o` up in the cosegmentation; only on a miss asks the
/// segmenter.
pub fn resolve_source_mask(
    image: &ContentHash,
    coseg: &CoSegmentation,
    t_o: &str,
    synonyms: &SynonymTable,
    resolver: Option<&dyn ChatModel>,
    segmenter: &dyn Segmenter,
) -> Result<SourceMask, AutomaskError> {
    if t_o.trim().is_empty() {
        return Err(AutomaskError::InvalidTask("source description is empty".into()));
    }
    if let Some(entry) = lookup(coseg, t_o, synonyms, resolver).filter(|e| !e.mask.is_empty()) {
        return Ok(SourceMask {
            label: Some(entry.label.clone()),
            mask: entry.mask.clone(),
            provenance: SourceProvenance::CosegLookup,
        });
    }
    let mask = segmenter.segment(image, t_o)?;
    if mask.dims() != coseg.dims() {
        return Err(MaskError::Dimension {
            expected: coseg.dims(),
            actual: mask.dims(),
        }
        .into());
    }
    if mask.is_empty() {
        return Err(AutomaskError::SourceNotFound(t_o.to_string()));
    }
    Ok(SourceMask {
        label: None,
        mask,
        provenance: SourceProvenance::OpenVocabFallback,
    })
}

pub fn mask_for_removal(m_o: &BinaryMask, radius: u32) -> Result<BinaryMask, AutomaskError> {
    if m_o.is_empty() {
        return Err(AutomaskError::EmptyMask);
    }
    Ok(dilate_maxpool(m_o, radius))
}

pub fn mask_for_recolor(
    image: &ContentHash,
    m_o: &BinaryMask,
    matting: &dyn Matter,
    threshold: f32,
) -> Result<BinaryMask, AutomaskError> {
    if m_o.is_empty() {
        return Err(AutomaskError::EmptyMask);
    }
    let matte = matting.matte(image)?;
    let mask = intersect(&binarize(&matte, threshold)?, m_o)?;
    if mask.is_empty() {
        return Err(AutomaskError::DegenerateMask);
    }
    Ok(mask)
}

fn reasoner_prompt(labels: &[String], t_e: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(
            "You decide which labelled regions of a photographed person a new clothing item or \
             accessory would cover once worn. Reply on a single line with a comma-separated \
             subset of the given labels, or `none`. Use only labels from the list.",
        ),
        ChatMessage::user(format!("Labels: {}\nItem: {t_e}\nCovered:", labels.join(", "))),
    ]
}

fn parse_reasoner(answer: &str, labels: &[String]) -> Option<Vec<String>> {
    let mut lines = answer.lines().map(str::trim).filter(|l| !l.is_empty());
    let line = lines.next()?;
    if lines.next().is_some() {
        return None;
    }
    if text::clean(line) == "none" {
        return Some(Vec::new());
    }
    let mut out: Vec<String> = Vec::new();
    for item in line.split(',') {
        let item = text::clean(item.trim_matches(|c: char| c == '.' || c == '`' || c == '"' || c == '\''));
        if labels.contains(&item) && !out.contains(&item) {
            out.push(item);
        }
    }
    Some(out)
}

/// Parts of the person the described item may cover. A reasoner answer
/// is filtered to labels present in `coseg`; without a reasoner, or when it
/// fails or answers off-format, the rule table decides.
pub fn infer_occluded_parts(
    coseg: &CoSegmentation,
    t_e: &str,
    reasoner: Option<&dyn ChatModel>,
    fallback: &OcclusionRuleTable,
) -> Vec<OccludedPart> {
    let labels = coseg.labels();
    let from_model = reasoner.and_then(|model| match model.complete(&reasoner_prompt(&labels, t_e)) {
        Ok(answer) => {
            let parsed = parse_reasoner(&answer, &labels);
            if parsed.is_none() {
                tracing::warn!(item = t_e, "occlusion reasoner answered off-format, using rule table");
            }
            parsed
        }
        Err(e) => {
            tracing::warn!(item = t_e, error = %e, "occlusion reasoner unavailable, using rule table");
            None
        }
    });
    let chosen = from_model.unwrap_or_else(|| fallback.labels_for(t_e));
    chosen
        .into_iter()
        .filter_map(|label| {
            coseg.get(&label).map(|e| OccludedPart {
                label,
                mask: e.mask.clone(),
            })
        })
        .collect()
}

pub fn mask_for_replacement(
    m_o: &BinaryMask,
    occluded: &[&BinaryMask],
    radius: u32,
) -> Result<BinaryMask, AutomaskError> {
    if m_o.is_empty() {
        return Err(AutomaskError::EmptyMask);
    }
    let mut all = vec![m_o];
    all.extend_from_slice(occluded);
    Ok(dilate_maxpool(&union(&all)?, radius))
}

pub fn mask_for_addition(occluded: &[&BinaryMask], radius: u32, t_e: &str) -> Result<BinaryMask, AutomaskError> {
    if occluded.iter().all(|m| m.is_empty()) {
        return Err(AutomaskError::PlacementNotFound(t_e.to_string()));
    }
    Ok(dilate_maxpool(&union(occluded)?, radius))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutomaskConfig {
    /// `None` uses max(3, 1% of the short image side).
    pub dilation_radius: Option<u32>,
    pub matte_threshold: f32,
    /// Ask the chat backend to resolve unknown part names.
    pub use_term_resolver: bool,
    /// Ask the chat backend which parts a new item covers.
    pub use_occlusion_reasoner: bool,
}

impl Default for AutomaskConfig {
    fn default() -> Self {
        Self {
            dilation_radius: None,
            matte_threshold: 0.5,
            use_term_resolver: true,
            use_occlusion_reasoner: true,
        }
    }
}

pub struct Automasker<'a> {
    pub backends: &'a Backends,
    pub synonyms: &'a SynonymTable,
    pub occlusion: &'a OcclusionRuleTable,
    pub config: &'a AutomaskConfig,
}

impl Automasker<'_> {
    pub fn generate_mask(
        &self,
        image: &ContentHash,
        task: &EditTask,
        coseg: &CoSegmentation,
    ) -> Result<MaskPlan, AutomaskError> {
        task.validate().map_err(|e| AutomaskError::InvalidTask(e.to_string()))?;
        let (w, h) = coseg.dims();
        let radius = self.config.dilation_radius.unwrap_or_else(|| default_dilation_radius(w, h));
        let chat: &dyn ChatModel = self.backends.chat.as_ref();
        let resolver = self.config.use_term_resolver.then_some(chat);
        let reasoner = self.config.use_occlusion_reasoner.then_some(chat);
        let source = |t_o: &str| {
            resolve_source_mask(image, coseg, t_o, self.synonyms, resolver, self.backends.segmenter.as_ref())
        };

        let (mask, source, occluded_parts) = match task.category {
            Category::Removal => {
                let src = source(task.source())?;
                (mask_for_removal(&src.mask, radius)?, Some(src), Vec::new())
            }
            Category::Recoloring => {
                let src = source(task.source())?;
                let m = mask_for_recolor(image, &src.mask, self.backends.matting.as_ref(), self.config.matte_threshold)?;
                (m, Some(src), Vec::new())
            }
            Category::Replacement => {
                let src = source(task.source())?;
                let parts = infer_occluded_parts(coseg, task.target(), reasoner, self.occlusion);
                let masks: Vec<&BinaryMask> = parts.iter().map(|p| &p.mask).collect();
                (mask_for_replacement(&src.mask, &masks, radius)?, Some(src), parts)
            }
            Category::Addition => {
                let parts = infer_occluded_parts(coseg, task.target(), reasoner, self.occlusion);
                let masks: Vec<&BinaryMask> = parts.iter().map(|p| &p.mask).collect();
                (mask_for_addition(&masks, radius, task.target())?, None, parts)
            }
        };
        Ok(MaskPlan {
            category: task.category,
            mask,
            source,
            occluded_parts,
            dilation_radius: radius,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MaskPlanRecord {
    pub category: Category,
    pub provenance: SourceProvenance,
    pub dilation_radius: u32,
    pub occluded_labels: Vec<String>,
    pub source_label: Option<String>,
    pub mask_png: ContentHash,
    pub source_mask_png: Option<ContentHash>,
    pub area_pixels: u64,
}

/// Stores the mask (and source mask) PNGs plus the JSON record; returns
/// the record and its hash.
pub fn store_mask_plan(plan: &MaskPlan, store: &BlobStore) -> Result<(ContentHash, MaskPlanRecord), AutomaskError> {
    let mask_png = store.put(&encode_mask_png(&plan.mask)?)?;
    let source_mask_png = match plan.source_mask() {
        Some(m) => Some(store.put(&encode_mask_png(m)?)?),
        None => None,
    };
    let record = MaskPlanRecord {
        category: plan.category,
        provenance: plan.source_provenance(),
        dilation_radius: plan.dilation_radius,
        occluded_labels: plan.occluded_labels(),
        source_label: plan.source.as_ref().and_then(|s| s.label.clone()),
        mask_png,
        source_mask_png,
        area_pixels: plan.mask.area(),
    };
    let json = serde_json::to_vec_pretty(&record).expect("plain record serializes");
    Ok((store.put(&json)?, record))
}

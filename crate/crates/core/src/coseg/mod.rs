//! Cosegmentation: a fine-grained semantic map built by fusing a garment-level
//! human-parsing map with a clothing-agnostic body-part map.
//!
//! Entries are keyed by label and kept in a deterministic order (fusion
//! rules first, then parsing passthrough, then pose passthrough, then
//! derived semantics). Non-derived entries are pairwise disjoint and
//! non-empty; derived entries may overlap anything and may be empty.

mod artifact;
mod derive;
mod rules;
mod terms;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::mask::{BinaryMask, LabelMap, MaskError};

pub use artifact::{load_cosegmentation, store_cosegmentation, CosegManifest, ManifestEntry};
pub use derive::{derive_semantics, derive_semantics_lenient, Axis, DerivedSemanticRule, RecipeStep};
pub use rules::{FusionRule, FusionRuleTable};
pub use terms::{lookup, normalize_term, SynonymTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CosegError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("invalid rule table: {0}")]
    Rules(String),
    #[error("derived semantic `{rule}` references missing label(s): {missing}")]
    Recipe { rule: String, missing: String },
    #[error("cosegmentation artifact: {0}")]
    Artifact(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Parsing,
    Pose,
    Fused,
    Derived,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CosegEntry {
    pub label: String,
    pub mask: BinaryMask,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoSegmentation {
    width: u32,
    height: u32,
    entries: IndexMap<String, CosegEntry>,
}

impl CoSegmentation {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            entries: IndexMap::new(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&CosegEntry> {
        self.entries.get(label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.entries.contains_key(label)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CosegEntry> {
        self.entries.values()
    }

    pub fn labels(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    /// Inserts or replaces an entry. Dimensions must match.
    pub(crate) fn insert(&mut self, entry: CosegEntry) -> Result<(), CosegError> {
        if entry.mask.dims() != self.dims() {
            return Err(MaskError::Dimension {
                expected: self.dims(),
                actual: entry.mask.dims(),
            }
            .into());
        }
        self.entries.insert(entry.label.clone(), entry);
        Ok(())
    }
}

pub fn build_cosegmentation(
    parsing: &LabelMap,
    pose: &LabelMap,
    rules: &FusionRuleTable,
) -> Result<CoSegmentation, CosegError> {
    build_cosegmentation_with(parsing, pose, rules, Exec::default())
}

/// Single pass over the pixels: a (parsing, pose) → entry lookup table
/// assigns each pixel to at most one entry, which is what makes the
/// non-derived entries disjoint by construction.
pub fn build_cosegmentation_with(
    parsing: &LabelMap,
    pose: &LabelMap,
    rules: &FusionRuleTable,
    exec: Exec,
) -> Result<CoSegmentation, CosegError> {
    if parsing.dims() != pose.dims() {
        return Err(MaskError::Dimension {
            expected: parsing.dims(),
            actual: pose.dims(),
        }
        .into());
    }
    rules.validate()?;

    let parsing_idx = |name: &str| {
        parsing
            .index_of(name)
            .ok_or_else(|| CosegError::from(MaskError::UnknownLabel(name.to_string())))
    };
    let pose_idx = |name: &str| {
        pose.index_of(name)
            .ok_or_else(|| CosegError::from(MaskError::UnknownLabel(name.to_string())))
    };

    let pv = parsing.vocabulary().len();
    let qv = pose.vocabulary().len();
    // entry ids start at 1; 0 means "no entry"
    let mut table = vec![0u16; pv * qv];
    let mut outputs: Vec<(String, Provenance)> = Vec::new();

    for r in &rules.rules {
        let (p, q) = (parsing_idx(&r.parsing)? as usize, pose_idx(&r.pose)? as usize);
        outputs.push((r.fused.clone(), Provenance::Fused));
        table[p * qv + q] = outputs.len() as u16;
    }
    for name in &rules.passthrough {
        let p = parsing_idx(name)? as usize;
        outputs.push((name.clone(), Provenance::Parsing));
        let id = outputs.len() as u16;
        table[p * qv..(p + 1) * qv].fill(id);
    }
    for name in &rules.pose_passthrough {
        let q = pose_idx(name)? as usize;
        outputs.push((name.clone(), Provenance::Pose));
        table[q] = outputs.len() as u16;
    }

    let width = parsing.width() as usize;
    let mut plane = vec![0u16; parsing.labels().len()];
    exec.for_each_row(&mut plane, width, |y, row| {
        let off = y * width;
        let ps = &parsing.labels()[off..off + width];
        let qs = &pose.labels()[off..off + width];
        for ((out, p), q) in row.iter_mut().zip(ps).zip(qs) {
            *out = table[*p as usize * qv + *q as usize];
        }
    });

    let ids: Vec<u16> = (1..=outputs.len() as u16).collect();
    let masks = exec.map(&ids, |id| {
        let bits = plane.iter().map(|v| v == id).collect();
        BinaryMask::from_bits(parsing.width(), parsing.height(), bits)
    });

    let mut coseg = CoSegmentation::empty(parsing.width(), parsing.height());
    for ((label, provenance), mask) in outputs.into_iter().zip(masks) {
        let mask = mask?;
        if mask.is_empty() {
            continue;
        }
        coseg.insert(CosegEntry {
            label,
            mask,
            provenance,
        })?;
    }
    Ok(coseg)
}

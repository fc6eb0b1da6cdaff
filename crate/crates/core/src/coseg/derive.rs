//! Derived semantics: placements that no upstream model labels directly
//! (wrist, neckline, waist, ...) built from existing entries by union,
//! cropping, dilation and boundary bands.
//!
//! A recipe runs its steps against an accumulator that starts empty.
//! A step naming labels computes its result from the union of those of the
//! labels that exist (the rest act as fallbacks) and ORs it into the
//! accumulator; it fails only when none of them exist. A `crop` or `dilate`
//! step with no labels transforms the accumulator itself.

use serde::{Deserialize, Serialize};

use super::{CoSegmentation, CosegEntry, CosegError, Provenance};
use crate::mask::{default_dilation_radius, dilate_maxpool, intersect, union, BinaryMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Vertical,
    Horizontal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RecipeStep {
    Union {
        labels: Vec<String>,
    },
    /// Keep the `range` fraction of each source's bounding box along `axis`
    /// (0 = top/left edge, 1 = bottom/right edge).
    Crop {
        #[serde(default)]
        labels: Vec<String>,
        axis: Axis,
        range: [f64; 2],
    },
    /// `radius: None` uses the image's default dilation radius.
    Dilate {
        #[serde(default)]
        labels: Vec<String>,
        #[serde(default)]
        radius: Option<u32>,
    },
    /// Pixels within `radius` of both `a` and `b`.
    BoundaryBand {
        a: Vec<String>,
        b: Vec<String>,
        #[serde(default)]
        radius: Option<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedSemanticRule {
    pub name: String,
    pub recipe: Vec<RecipeStep>,
}

impl DerivedSemanticRule {
    pub fn validate(&self) -> Result<(), CosegError> {
        let bad = |m: String| Err(CosegError::Rules(format!("derived `{}`: {m}", self.name)));
        if self.recipe.is_empty() {
            return bad("empty recipe".into());
        }
        for step in &self.recipe {
            match step {
                RecipeStep::Union { labels } if labels.is_empty() => {
                    return bad("union step needs labels".into())
                }
                RecipeStep::Crop { range: [lo, hi], .. }
                    if !(0.0..=1.0).contains(lo) || !(0.0..=1.0).contains(hi) || lo > hi =>
                {
                    return bad(format!("crop range [{lo}, {hi}] invalid"))
                }
                RecipeStep::BoundaryBand { a, b, .. } if a.is_empty() || b.is_empty() => {
                    return bad("boundary band needs both sides".into())
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, coseg: &CoSegmentation) -> Result<BinaryMask, CosegError> {
        self.validate()?;
        let (w, h) = coseg.dims();
        let default_radius = default_dilation_radius(w, h);
        let mut acc = BinaryMask::new(w, h)?;
        for step in &self.recipe {
            acc = match step {
                RecipeStep::Union { labels } => {
                    let src = self.sources(coseg, labels)?;
                    union(&[&acc, &union_of(&src)?])?
                }
                RecipeStep::Crop { labels, axis, range } if labels.is_empty() => {
                    crop(&acc, *axis, *range)?
                }
                RecipeStep::Crop { labels, axis, range } => {
                    let mut out = acc;
                    for m in self.sources(coseg, labels)? {
                        out = union(&[&out, &crop(m, *axis, *range)?])?;
                    }
                    out
                }
                RecipeStep::Dilate { labels, radius } => {
                    let r = radius.unwrap_or(default_radius);
                    if labels.is_empty() {
                        dilate_maxpool(&acc, r)
                    } else {
                        let src = union_of(&self.sources(coseg, labels)?)?;
                        union(&[&acc, &dilate_maxpool(&src, r)])?
                    }
                }
                RecipeStep::BoundaryBand { a, b, radius } => {
                    let r = radius.unwrap_or(default_radius);
                    let ma = union_of(&self.sources(coseg, a)?)?;
                    let mb = union_of(&self.sources(coseg, b)?)?;
                    let band = intersect(&dilate_maxpool(&ma, r), &dilate_maxpool(&mb, r))?;
                    union(&[&acc, &band])?
                }
            };
        }
        Ok(acc)
    }

    fn sources<'c>(
        &self,
        coseg: &'c CoSegmentation,
        labels: &[String],
    ) -> Result<Vec<&'c BinaryMask>, CosegError> {
        let found: Vec<&BinaryMask> = labels
            .iter()
            .filter_map(|l| coseg.get(l).map(|e| &e.mask))
            .collect();
        if found.is_empty() {
            return Err(CosegError::Recipe {
                rule: self.name.clone(),
                missing: labels.join(" | "),
            });
        }
        Ok(found)
    }
}

fn union_of(masks: &[&BinaryMask]) -> Result<BinaryMask, CosegError> {
    Ok(union(masks)?)
}

fn crop(m: &BinaryMask, axis: Axis, [lo, hi]: [f64; 2]) -> Result<BinaryMask, CosegError> {
    let Some(bb) = m.bbox() else {
        return Ok(m.clone());
    };
    let (start, extent) = match axis {
        Axis::Vertical => (bb.y, bb.height),
        Axis::Horizontal => (bb.x, bb.width),
    };
    let from = start + (lo * extent as f64).round() as u32;
    let to = start + (hi * extent as f64).round() as u32;
    Ok(BinaryMask::from_fn(m.width(), m.height(), |x, y| {
        let t = match axis {
            Axis::Vertical => y,
            Axis::Horizontal => x,
        };
        t >= from && t < to && m.get(x, y)
    })?)
}

/// Extends `coseg` with one derived entry per rule, in rule order. Later
/// rules may reference earlier derived entries. Fails on the first recipe
/// that cannot be evaluated.
pub fn derive_semantics(
    coseg: &CoSegmentation,
    rules: &[DerivedSemanticRule],
) -> Result<CoSegmentation, CosegError> {
    let mut out = coseg.clone();
    for rule in rules {
        ensure_new_label(&out, rule)?;
        let mask = rule.evaluate(&out)?;
        out.insert(CosegEntry {
            label: rule.name.clone(),
            mask,
            provenance: Provenance::Derived,
        })?;
    }
    Ok(out)
}

/// Like [`derive_semantics`], but a rule whose inputs are missing yields an
/// empty derived entry and its error is returned alongside.
pub fn derive_semantics_lenient(
    coseg: &CoSegmentation,
    rules: &[DerivedSemanticRule],
) -> (CoSegmentation, Vec<CosegError>) {
    let mut out = coseg.clone();
    let mut errors = Vec::new();
    for rule in rules {
        if let Err(e) = ensure_new_label(&out, rule) {
            errors.push(e);
            continue;
        }
        let mask = match rule.evaluate(&out) {
            Ok(m) => m,
            Err(e) => {
                errors.push(e);
                match BinaryMask::new(out.width(), out.height()) {
                    Ok(m) => m,
                    Err(_) => continue,
                }
            }
        };
        // dimensions come from `out`, so insert cannot fail
        let _ = out.insert(CosegEntry {
            label: rule.name.clone(),
            mask,
            provenance: Provenance::Derived,
        });
    }
    (out, errors)
}

fn ensure_new_label(coseg: &CoSegmentation, rule: &DerivedSemanticRule) -> Result<(), CosegError> {
    if coseg.contains(&rule.name) {
        return Err(CosegError::Rules(format!(
            "derived label `{}` already present",
            rule.name
        )));
    }
    Ok(())
}

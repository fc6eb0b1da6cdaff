//! Pixel-grid mask mathematics.
//!
//! Every mask in the engine is a [`BinaryMask`]: a row-major boolean plane
//! with fixed, non-zero dimensions. Label maps from human parsing and pose
//! models are [`LabelMap`]s; soft matting output is an [`AlphaMatte`].
//! The operations here are pure and never resize.

mod codec;
mod ops;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codec::{
    decode_label_map_png, decode_mask_png, decode_matte_png, encode_label_map_png,
    encode_mask_png, encode_matte_png,
};
pub use ops::{
    area, bbox, binarize, default_dilation_radius, dilate_maxpool, dilate_maxpool_with, intersect,
    intersect_with, iou, mask_from_labels, union, union_with,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    Dimension {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("invalid raster: {0}")]
    Invalid(String),
    #[error("codec error: {0}")]
    Codec(String),
}

fn check_dims(width: u32, height: u32, len: usize) -> Result<(), MaskError> {
    if width == 0 || height == 0 {
        return Err(MaskError::Invalid(format!(
            "dimensions must be positive, got {width}x{height}"
        )));
    }
    let expected = width as usize * height as usize;
    if len != expected {
        return Err(MaskError::Invalid(format!(
            "plane has {len} pixels, {width}x{height} needs {expected}"
        )));
    }
    Ok(())
}

/// Axis-aligned pixel rectangle, `x`/`y` inclusive, extent exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.width && y < self.y + self.height
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    /// All-zero mask.
    pub fn new(width: u32, height: u32) -> Result<Self, MaskError> {
        Self::filled(width, height, false)
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Result<Self, MaskError> {
        let len = width as usize * height as usize;
        check_dims(width, height, len)?;
        Ok(Self {
            width,
            height,
            bits: vec![value; len],
        })
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, MaskError> {
        check_dims(width, height, bits.len())?;
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Result<Self, MaskError> {
        let len = width as usize * height as usize;
        check_dims(width, height, len)?;
        let mut bits = Vec::with_capacity(len);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Mask with `rect` (clipped to the grid) set.
    pub fn from_rect(width: u32, height: u32, rect: Rect) -> Result<Self, MaskError> {
        Self::from_fn(width, height, |x, y| rect.contains(x, y))
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<bool> {
        self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|b| **b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn bbox(&self) -> Option<Rect> {
        ops::bbox(self)
    }

    /// `true` when every set pixel of `self` is also set in `other`.
    /// Masks of different dimensions are never subsets of each other.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    pub(crate) fn ensure_same_dims(&self, other: &BinaryMask) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::Dimension {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }
}

/// Soft foreground opacity plane with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMatte {
    width: u32,
    height: u32,
    alpha: Vec<f32>,
}

impl AlphaMatte {
    pub fn new(width: u32, height: u32, alpha: Vec<f32>) -> Result<Self, MaskError> {
        check_dims(width, height, alpha.len())?;
        if let Some(bad) = alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(MaskError::Invalid(format!("alpha value {bad} outside [0,1]")));
        }
        Ok(Self {
            width,
            height,
            alpha,
        })
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Result<Self, MaskError> {
        Self::new(width, height, vec![value; width as usize * height as usize])
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

    pub fn alpha(&self) -> &[f32] {
        &self.alpha
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.alpha[y as usize * self.width as usize + x as usize]
    }
}

/// Row-major plane of small label indices plus the names they stand for.
/// Index 0 is always `background`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    labels: Vec<u8>,
    vocabulary: Vec<String>,
}

pub const BACKGROUND: &str = "background";

impl LabelMap {
    pub fn new(
        width: u32,
        height: u32,
        labels: Vec<u8>,
        vocabulary: Vec<String>,
    ) -> Result<Self, MaskError> {
        check_dims(width, height, labels.len())?;
        if vocabulary.is_empty() || vocabulary.len() > 256 {
            return Err(MaskError::Invalid(format!(
                "vocabulary must have 1..=256 entries, got {}",
                vocabulary.len()
            )));
        }
        if vocabulary[0] != BACKGROUND {
            return Err(MaskError::Invalid(format!(
                "vocabulary index 0 must be `{BACKGROUND}`, got `{}`",
                vocabulary[0]
            )));
        }
        for (i, name) in vocabulary.iter().enumerate() {
            if vocabulary[..i].contains(name) {
                return Err(MaskError::Invalid(format!("duplicate label `{name}`")));
            }
        }
        if let Some(bad) = labels.iter().find(|l| **l as usize >= vocabulary.len()) {
            return Err(MaskError::Invalid(format!(
                "label index {bad} outside vocabulary of {}",
                vocabulary.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
            vocabulary,
        })
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

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn index_of(&self, name: &str) -> Option<u8> {
        self.vocabulary
            .iter()
            .position(|v| v == name)
            .map(|i| i as u8)
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn name_at(&self, x: u32, y: u32) -> &str {
        &self.vocabulary[self.get(x, y) as usize]
    }
}

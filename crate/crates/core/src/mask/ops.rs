use std::collections::BTreeSet;

use super::{AlphaMatte, BinaryMask, LabelMap, MaskError, Rect};
use crate::exec::Exec;

/// `max(3, round(0.01 * min(width, height)))`.
pub fn default_dilation_radius(width: u32, height: u32) -> u32 {
    let short = width.min(height) as f64;
    ((short * 0.01).round() as u32).max(3)
}

pub fn union(masks: &[&BinaryMask]) -> Result<BinaryMask, MaskError> {
    union_with(masks, Exec::default())
}

pub fn union_with(masks: &[&BinaryMask], exec: Exec) -> Result<BinaryMask, MaskError> {
    let first = masks.first().ok_or(MaskError::EmptyInput("union of zero masks"))?;
    for m in &masks[1..] {
        first.ensure_same_dims(m)?;
    }
    let width = first.width as usize;
    let mut bits = first.bits.clone();
    if masks.len() > 1 {
        exec.for_each_row(&mut bits, width, |y, row| {
            let offset = y * width;
            for m in &masks[1..] {
                let src = &m.bits[offset..offset + width];
                for (dst, s) in row.iter_mut().zip(src) {
                    *dst |= *s;
                }
            }
        });
    }
    BinaryMask::from_bits(first.width, first.height, bits)
}

pub fn intersect(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask, MaskError> {
    intersect_with(a, b, Exec::default())
}

pub fn intersect_with(a: &BinaryMask, b: &BinaryMask, exec: Exec) -> Result<BinaryMask, MaskError> {
    a.ensure_same_dims(b)?;
    let width = a.width as usize;
    let mut bits = a.bits.clone();
    exec.for_each_row(&mut bits, width, |y, row| {
        let src = &b.bits[y * width..(y + 1) * width];
        for (dst, s) in row.iter_mut().zip(src) {
            *dst &= *s;
        }
    });
    BinaryMask::from_bits(a.width, a.height, bits)
}

/// Square-window maximum filter (Chebyshev radius, zero padding).
pub fn dilate_maxpool(m: &BinaryMask, radius: u32) -> BinaryMask {
    dilate_maxpool_with(m, radius, Exec::default())
}

/// The window is separable: a horizontal sliding max followed by a vertical
/// one. Each pass counts set pixels in the window with prefix sums, so the
/// cost is O(w·h) regardless of radius.
pub fn dilate_maxpool_with(m: &BinaryMask, radius: u32, exec: Exec) -> BinaryMask {
    if radius == 0 {
        return m.clone();
    }
    let (w, h) = (m.width as usize, m.height as usize);
    let r = radius as usize;

    let mut horizontal = vec![false; w * h];
    exec.for_each_row(&mut horizontal, w, |y, row| {
        let src = &m.bits[y * w..(y + 1) * w];
        let mut prefix = Vec::with_capacity(w + 1);
        prefix.push(0u32);
        let mut acc = 0u32;
        for &b in src {
            acc += b as u32;
            prefix.push(acc);
        }
        for (x, out) in row.iter_mut().enumerate() {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            *out = prefix[hi] > prefix[lo];
        }
    });

    // Column prefix counts: prefix[y * w + x] = set pixels in rows < y of column x.
    let mut prefix = vec![0u32; (h + 1) * w];
    for y in 0..h {
        let (done, rest) = prefix.split_at_mut((y + 1) * w);
        let prev = &done[y * w..];
        let src = &horizontal[y * w..(y + 1) * w];
        for x in 0..w {
            rest[x] = prev[x] + src[x] as u32;
        }
    }

    let mut bits = vec![false; w * h];
    exec.for_each_row(&mut bits, w, |y, row| {
        let lo = y.saturating_sub(r) * w;
        let hi = (y + r + 1).min(h) * w;
        for (x, out) in row.iter_mut().enumerate() {
            *out = prefix[hi + x] > prefix[lo + x];
        }
    });
    BinaryMask {
        width: m.width,
        height: m.height,
        bits,
    }
}

/// Pixel set iff `alpha >= threshold`; `threshold` must lie in `(0, 1]`.
pub fn binarize(matte: &AlphaMatte, threshold: f32) -> Result<BinaryMask, MaskError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(MaskError::Parameter(format!(
            "binarization threshold {threshold} outside (0, 1]"
        )));
    }
    let bits = matte.alpha.iter().map(|a| *a >= threshold).collect();
    BinaryMask::from_bits(matte.width, matte.height, bits)
}

pub fn mask_from_labels<S: AsRef<str>>(lm: &LabelMap, names: &[S]) -> Result<BinaryMask, MaskError> {
    let mut wanted = BTreeSet::new();
    for name in names {
        let name = name.as_ref();
        let idx = lm
            .index_of(name)
            .ok_or_else(|| MaskError::UnknownLabel(name.to_string()))?;
        wanted.insert(idx);
    }
    let mut table = [false; 256];
    for idx in wanted {
        table[idx as usize] = true;
    }
    let bits = lm.labels.iter().map(|l| table[*l as usize]).collect();
    BinaryMask::from_bits(lm.width, lm.height, bits)
}

pub fn area(m: &BinaryMask) -> u64 {
    m.area()
}

pub fn bbox(m: &BinaryMask) -> Option<Rect> {
    let (w, h) = (m.width, m.height);
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    let mut any = false;
    for y in 0..h {
        let row = &m.bits[(y * w) as usize..((y + 1) * w) as usize];
        let Some(first) = row.iter().position(|b| *b) else {
            continue;
        };
        let last = row.iter().rposition(|b| *b).unwrap_or(first);
        any = true;
        x0 = x0.min(first as u32);
        x1 = x1.max(last as u32);
        y0 = y0.min(y);
        y1 = y;
    }
    any.then(|| Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
}

/// Intersection over union. Two empty masks score 0.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MaskError> {
    a.ensure_same_dims(b)?;
    let (mut inter, mut uni) = (0u64, 0u64);
    for (x, y) in a.bits.iter().zip(&b.bits) {
        inter += (*x && *y) as u64;
        uni += (*x || *y) as u64;
    }
    Ok(if uni == 0 { 0.0 } else { inter as f64 / uni as f64 })
}

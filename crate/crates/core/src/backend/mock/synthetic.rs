//! A procedurally drawn standing person, scaled to any canvas. Used by the
//! built-in mock scenario for parsing, pose, matting and demo photos.

use image::{Rgb, RgbImage};

use crate::mask::{AlphaMatte, LabelMap, MaskError};
use crate::resources;

/// `(label, x0, y0, x1, y1)` in fractions of the canvas; later boxes paint
/// over earlier ones.
type Part = (&'static str, f32, f32, f32, f32);

const PARSING: &[Part] = &[
    ("hair", 0.41, 0.03, 0.59, 0.11),
    ("face", 0.44, 0.08, 0.56, 0.18),
    ("torso-skin", 0.47, 0.18, 0.53, 0.22),
    ("top", 0.37, 0.21, 0.63, 0.51),
    ("left-arm", 0.29, 0.21, 0.37, 0.50),
    ("right-arm", 0.63, 0.21, 0.71, 0.50),
    ("top", 0.29, 0.21, 0.37, 0.29),
    ("top", 0.63, 0.21, 0.71, 0.29),
    ("pants", 0.38, 0.50, 0.62, 0.82),
    ("left-leg", 0.39, 0.82, 0.49, 0.91),
    ("right-leg", 0.51, 0.82, 0.61, 0.91),
    ("left-shoe", 0.38, 0.91, 0.49, 0.95),
    ("right-shoe", 0.51, 0.91, 0.62, 0.95),
];

const POSE: &[Part] = &[
    ("head", 0.41, 0.03, 0.59, 0.205),
    ("torso", 0.36, 0.205, 0.64, 0.52),
    ("left-upper-arm", 0.28, 0.21, 0.375, 0.35),
    ("left-lower-arm", 0.28, 0.35, 0.375, 0.46),
    ("left-hand", 0.28, 0.46, 0.375, 0.51),
    ("right-upper-arm", 0.625, 0.21, 0.72, 0.35),
    ("right-lower-arm", 0.625, 0.35, 0.72, 0.46),
    ("right-hand", 0.625, 0.46, 0.72, 0.51),
    ("left-upper-leg", 0.38, 0.52, 0.50, 0.70),
    ("left-lower-leg", 0.38, 0.70, 0.50, 0.90),
    ("left-foot", 0.38, 0.90, 0.50, 0.96),
    ("right-upper-leg", 0.50, 0.52, 0.62, 0.70),
    ("right-lower-leg", 0.50, 0.70, 0.62, 0.90),
    ("right-foot", 0.50, 0.90, 0.62, 0.96),
];

fn inside(x: u32, y: u32, w: u32, h: u32, (x0, y0, x1, y1): (f32, f32, f32, f32)) -> bool {
    let fx = (x as f32 + 0.5) / w as f32;
    let fy = (y as f32 + 0.5) / h as f32;
    fx >= x0 && fx < x1 && fy >= y0 && fy < y1
}

/// Pixels whose centre lies in the fractional box.
pub fn region_contains(x: u32, y: u32, w: u32, h: u32, frac: (f32, f32, f32, f32)) -> bool {
    inside(x, y, w, h, frac)
}

fn paint(w: u32, h: u32, parts: &[Part], vocabulary: Vec<String>) -> Result<LabelMap, MaskError> {
    let mut labels = vec![0u8; w as usize * h as usize];
    for &(name, x0, y0, x1, y1) in parts {
        let idx = vocabulary
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| MaskError::UnknownLabel(name.to_string()))? as u8;
        for y in 0..h {
            for x in 0..w {
                if inside(x, y, w, h, (x0, y0, x1, y1)) {
                    labels[(y * w + x) as usize] = idx;
                }
            }
        }
    }
    LabelMap::new(w, h, labels, vocabulary)
}

pub fn parsing_map(w: u32, h: u32) -> Result<LabelMap, MaskError> {
    paint(w, h, PARSING, resources::parsing_vocabulary())
}

pub fn pose_map(w: u32, h: u32) -> Result<LabelMap, MaskError> {
    paint(w, h, POSE, resources::pose_vocabulary())
}

/// Hard-edged matte of the parsed person.
pub fn silhouette(w: u32, h: u32) -> Result<AlphaMatte, MaskError> {
    let parsing = parsing_map(w, h)?;
    let alpha = parsing.labels().iter().map(|&l| if l == 0 { 0.0 } else { 1.0 }).collect();
    AlphaMatte::new(w, h, alpha)
}

fn color_of(label: &str) -> [u8; 3] {
    match label {
        "hair" => [62, 40, 28],
        "face" | "torso-skin" | "left-arm" | "right-arm" | "left-leg" | "right-leg" => [224, 178, 148],
        "top" => [34, 34, 38],
        "pants" => [38, 52, 96],
        "left-shoe" | "right-shoe" => [90, 60, 40],
        _ => [236, 236, 232],
    }
}

/// Flat-shaded photo of the synthetic person with a faint fabric weave, so
/// edge extraction has something to find. Includes a gold necklace.
pub fn photo(w: u32, h: u32) -> Result<RgbImage, MaskError> {
    let parsing = parsing_map(w, h)?;
    let necklace = (0.45, 0.195, 0.55, 0.215);
    Ok(RgbImage::from_fn(w, h, |x, y| {
        if inside(x, y, w, h, necklace) {
            return Rgb([212, 175, 55]);
        }
        let mut c = color_of(parsing.name_at(x, y));
        if parsing.get(x, y) != 0 && (x / 3 + y / 3) % 2 == 0 {
            c = c.map(|v| v.saturating_add(10));
        }
        Rgb(c)
    }))
}

//! PNG carriers for mask artifacts.
//!
//! Binary masks and mattes are 8-bit grayscale. Label maps are 8-bit indexed
//! PNGs whose palette index is the label index; the vocabulary travels in a
//! JSON sidecar, not in the PNG.

use std::io::Cursor;

use super::{AlphaMatte, BinaryMask, LabelMap, MaskError};

fn codec_err(e: impl std::fmt::Display) -> MaskError {
    MaskError::Codec(e.to_string())
}

fn encode_png(
    width: u32,
    height: u32,
    color: png::ColorType,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> Result<Vec<u8>, MaskError> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width, height);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        if let Some(palette) = palette {
            encoder.set_palette(palette);
        }
        let mut writer = encoder.write_header().map_err(codec_err)?;
        writer.write_image_data(data).map_err(codec_err)?;
        writer.finish().map_err(codec_err)?;
    }
    Ok(out)
}

/// Decode to a single 8-bit channel. Palette images yield raw indices;
/// colour images are reduced to luma.
fn decode_plane(bytes: &[u8], keep_indices: bool) -> Result<(u32, u32, Vec<u8>), MaskError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(codec_err)?;
    let (color, depth) = reader.output_color_type();
    if depth == png::BitDepth::Eight
        && (color == png::ColorType::Grayscale || (keep_indices && color == png::ColorType::Indexed))
    {
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| codec_err("image too large"))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(codec_err)?;
        buf.truncate(info.buffer_size());
        let w = info.width as usize;
        let plane = if info.line_size == w {
            buf
        } else {
            buf.chunks(info.line_size)
                .flat_map(|row| row[..w].iter().copied())
                .collect()
        };
        return Ok((info.width, info.height, plane));
    }
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(codec_err)?;
    let luma = img.into_luma8();
    Ok((luma.width(), luma.height(), luma.into_raw()))
}

pub fn encode_mask_png(mask: &BinaryMask) -> Result<Vec<u8>, MaskError> {
    let data: Vec<u8> = mask.bits().iter().map(|b| if *b { 255 } else { 0 }).collect();
    encode_png(mask.width(), mask.height(), png::ColorType::Grayscale, None, &data)
}

/// Any pixel at or above mid-grey counts as set.
pub fn decode_mask_png(bytes: &[u8]) -> Result<BinaryMask, MaskError> {
    let (w, h, plane) = decode_plane(bytes, false)?;
    BinaryMask::from_bits(w, h, plane.into_iter().map(|v| v >= 128).collect())
}

pub fn encode_matte_png(matte: &AlphaMatte) -> Result<Vec<u8>, MaskError> {
    let data: Vec<u8> = matte
        .alpha()
        .iter()
        .map(|a| (a * 255.0).round() as u8)
        .collect();
    encode_png(matte.width(), matte.height(), png::ColorType::Grayscale, None, &data)
}

pub fn decode_matte_png(bytes: &[u8]) -> Result<AlphaMatte, MaskError> {
    let (w, h, plane) = decode_plane(bytes, false)?;
    AlphaMatte::new(w, h, plane.into_iter().map(|v| v as f32 / 255.0).collect())
}

/// Stable display colour for label index `i`; index 0 is black.
fn palette_color(i: usize) -> [u8; 3] {
    if i == 0 {
        return [0, 0, 0];
    }
    [
        (i * 97 % 256) as u8,
        ((i * 57 + 80) % 256) as u8,
        ((i * 193 + 160) % 256) as u8,
    ]
}

pub fn encode_label_map_png(lm: &LabelMap) -> Result<Vec<u8>, MaskError> {
    let palette = (0..lm.vocabulary().len())
        .flat_map(palette_color)
        .collect::<Vec<u8>>();
    encode_png(
        lm.width(),
        lm.height(),
        png::ColorType::Indexed,
        Some(palette),
        lm.labels(),
    )
}

/// Accepts indexed or 8-bit grayscale PNGs; pixel values are label indices.
pub fn decode_label_map_png(bytes: &[u8], vocabulary: Vec<String>) -> Result<LabelMap, MaskError> {
    let (w, h, plane) = decode_plane(bytes, true)?;
    LabelMap::new(w, h, plane, vocabulary)
}

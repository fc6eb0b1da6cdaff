//! RGB image decode/encode and header probing.

use std::io::Cursor;

use image::{ImageFormat, ImageReader, RgbImage};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("image: {0}")]
pub struct ImagingError(pub String);

fn reader(bytes: &[u8]) -> Result<ImageReader<Cursor<&[u8]>>, ImagingError> {
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| ImagingError(e.to_string()))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Jpeg) => Ok(reader),
        Some(other) => Err(ImagingError(format!("unsupported format {other:?}"))),
        None => Err(ImagingError("not a PNG or JPEG image".into())),
    }
}

/// Width and height from the header, without decoding pixels.
pub fn image_dims(bytes: &[u8]) -> Result<(u32, u32), ImagingError> {
    reader(bytes)?.into_dimensions().map_err(|e| ImagingError(e.to_string()))
}

pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage, ImagingError> {
    Ok(reader(bytes)?
        .decode()
        .map_err(|e| ImagingError(e.to_string()))?
        .into_rgb8())
}

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>, ImagingError> {
    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
        .map_err(|e| ImagingError(e.to_string()))?;
    Ok(out)
}

/// Canonical form for stored uploads: decoded and re-encoded as RGB8 PNG,
/// so identical pixels get identical content hashes.
pub fn normalize_to_png(bytes: &[u8]) -> Result<(Vec<u8>, (u32, u32)), ImagingError> {
    let img = decode_rgb(bytes)?;
    let dims = img.dimensions();
    Ok((encode_rgb_png(&img)?, dims))
}

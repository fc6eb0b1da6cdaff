//! Cosegmentation artifacts: one indexed PNG holding every non-derived
//! entry (pixel value = entry index, 0 = none) plus a JSON manifest.
//! Derived entries may overlap, so each is stored as its own mask PNG.

use serde::{Deserialize, Serialize};

use super::{CoSegmentation, CosegEntry, CosegError, Provenance};
use crate::mask::{
    decode_label_map_png, decode_mask_png, encode_label_map_png, encode_mask_png, BinaryMask,
    LabelMap, Rect, BACKGROUND,
};
use crate::store::{BlobStore, ContentHash};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ManifestEntry {
    pub label: String,
    pub provenance: Provenance,
    pub area_pixels: u64,
    pub bbox: Option<Rect>,
    /// Pixel value in the index PNG (non-derived entries).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub index: Option<u8>,
    /// Separate mask PNG (derived entries).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mask_png: Option<ContentHash>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CosegManifest {
    pub width: u32,
    pub height: u32,
    pub index_png: ContentHash,
    pub entries: Vec<ManifestEntry>,
}

fn artifact_err(e: impl std::fmt::Display) -> CosegError {
    CosegError::Artifact(e.to_string())
}

/// Writes the index PNG, derived-entry PNGs and the manifest; returns the
/// manifest's hash.
pub fn store_cosegmentation(
    coseg: &CoSegmentation,
    store: &BlobStore,
) -> Result<(ContentHash, CosegManifest), CosegError> {
    let (w, h) = coseg.dims();
    let mut plane = vec![0u8; w as usize * h as usize];
    let mut vocabulary = vec![BACKGROUND.to_string()];
    let mut entries = Vec::new();
    for entry in coseg.entries() {
        let mut manifest_entry = ManifestEntry {
            label: entry.label.clone(),
            provenance: entry.provenance,
            area_pixels: entry.mask.area(),
            bbox: entry.mask.bbox(),
            index: None,
            mask_png: None,
        };
        if entry.provenance == Provenance::Derived {
            let png = encode_mask_png(&entry.mask)?;
            manifest_entry.mask_png = Some(store.put(&png).map_err(artifact_err)?);
        } else {
            if vocabulary.len() > 255 {
                return Err(artifact_err("more than 255 non-derived entries"));
            }
            let idx = vocabulary.len() as u8;
            vocabulary.push(entry.label.clone());
            for (dst, set) in plane.iter_mut().zip(entry.mask.bits()) {
                if *set {
                    *dst = idx;
                }
            }
            manifest_entry.index = Some(idx);
        }
        entries.push(manifest_entry);
    }
    let index_map = LabelMap::new(w, h, plane, vocabulary)?;
    let index_png = store
        .put(&encode_label_map_png(&index_map)?)
        .map_err(artifact_err)?;
    let manifest = CosegManifest {
        width: w,
        height: h,
        index_png,
        entries,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(artifact_err)?;
    let hash = store.put(&json).map_err(artifact_err)?;
    Ok((hash, manifest))
}

pub fn load_cosegmentation(
    store: &BlobStore,
    manifest_hash: &ContentHash,
) -> Result<CoSegmentation, CosegError> {
    let bytes = store.get(manifest_hash).map_err(artifact_err)?;
    let manifest: CosegManifest = serde_json::from_slice(&bytes).map_err(artifact_err)?;
    let index_bytes = store.get(&manifest.index_png).map_err(artifact_err)?;
    let max_index = manifest.entries.iter().filter_map(|e| e.index).max().unwrap_or(0);
    let mut vocabulary = vec![BACKGROUND.to_string()];
    vocabulary.extend((1..=max_index).map(|i| format!("entry-{i}")));
    let plane = decode_label_map_png(&index_bytes, vocabulary)?;
    if plane.dims() != (manifest.width, manifest.height) {
        return Err(artifact_err("index PNG dimensions disagree with manifest"));
    }

    let mut coseg = CoSegmentation::empty(manifest.width, manifest.height);
    for e in &manifest.entries {
        let mask = match (e.index, &e.mask_png) {
            (Some(idx), _) => BinaryMask::from_bits(
                manifest.width,
                manifest.height,
                plane.labels().iter().map(|v| *v == idx).collect(),
            )?,
            (None, Some(hash)) => decode_mask_png(&store.get(hash).map_err(artifact_err)?)?,
            (None, None) => return Err(artifact_err(format!("entry `{}` has no pixels source", e.label))),
        };
        coseg.insert(CosegEntry {
            label: e.label.clone(),
            mask,
            provenance: e.provenance,
        })?;
    }
    Ok(coseg)
}

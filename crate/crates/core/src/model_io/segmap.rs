//! Segmentation-map export: an indexed label image (PGM or grayscale PNG by
//! extension) plus a JSON sidecar carrying the class table, a configuration
//! echo, and a payload checksum.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::image_io::{load_label_map, save_pgm_indices, save_png_indices};

/// Per-pixel class indices with their class table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub classes: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentationSidecar {
    pub classes: Vec<String>,
    pub height: usize,
    pub width: usize,
    /// SHA-256 over the row-major little-endian u32 label payload.
    pub label_checksum: String,
    /// Echo of the run configuration that produced the map.
    pub config: serde_json::Value,
}

impl SegmentationMap {
    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.height * self.width || self.labels.is_empty() {
            return Err(Error::Shape(format!(
                "{} labels for a {}x{} map",
                self.labels.len(),
                self.height,
                self.width
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize >= self.classes.len()) {
            return Err(Error::Contract(format!(
                "label {bad} outside class table of {} entries",
                self.classes.len()
            )));
        }
        Ok(())
    }

    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for &l in &self.labels {
            hasher.update(l.to_le_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn sidecar_path(map_path: &Path) -> PathBuf {
    let mut s = map_path.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

/// Write the label image plus its sidecar. The image codec is chosen by
/// extension: `.png` for PNG, anything else gets a binary PGM.
pub fn write_segmentation(
    map: &SegmentationMap,
    path: &Path,
    config_echo: &serde_json::Value,
) -> Result<()> {
    map.validate()?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => save_png_indices(path, map.width, map.height, &map.labels)?,
        _ => save_pgm_indices(path, map.width, map.height, &map.labels)?,
    }
    let sidecar = SegmentationSidecar {
        classes: map.classes.clone(),
        height: map.height,
        width: map.width,
        label_checksum: map.checksum(),
        config: config_echo.clone(),
    };
    let text = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::Decode(format!("sidecar encode: {e}")))?;
    fs::write(sidecar_path(path), text).map_err(|e| Error::io(path, e))
}

/// Load a map written by [`write_segmentation`]; verifies the checksum.
pub fn read_segmentation(path: &Path) -> Result<(SegmentationMap, SegmentationSidecar)> {
    let (h, w, labels) = load_label_map(path)?;
    let sc_path = sidecar_path(path);
    let text = fs::read_to_string(&sc_path).map_err(|e| Error::io(&sc_path, e))?;
    let sidecar: SegmentationSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Decode(format!("{}: {e}", sc_path.display())))?;
    let map = SegmentationMap {
        height: h,
        width: w,
        labels,
        classes: sidecar.classes.clone(),
    };
    if map.checksum() != sidecar.label_checksum {
        return Err(Error::Decode(format!(
            "{}: label payload does not match sidecar checksum",
            path.display()
        )));
    }
    Ok((map, sidecar))
}

//! Dataset manifest: (image, label-map) pairs with a class table and an
//! ignore label. Paths are resolved relative to the manifest file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::image_io::probe_dimensions;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestItem {
    pub image: PathBuf,
    pub label: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub ignore_label: u32,
    pub items: Vec<ManifestItem>,
}

impl DatasetManifest {
    /// Parse and validate: the class table is nonempty, every referenced
    /// file exists, and each label map has the dimensions of its image.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
        if manifest.classes.is_empty() {
            return Err(Error::Parameter(format!(
                "{}: empty class table",
                path.display()
            )));
        }
        if (manifest.ignore_label as usize) < manifest.classes.len() {
            return Err(Error::Parameter(format!(
                "{}: ignore label {} collides with a class index",
                path.display(),
                manifest.ignore_label
            )));
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for item in &mut manifest.items {
            item.image = resolve(base, &item.image);
            item.label = resolve(base, &item.label);
            let img_dims = probe_dimensions(&item.image)?;
            let label_dims = probe_dimensions(&item.label)?;
            if img_dims != label_dims {
                return Err(Error::Shape(format!(
                    "{}: label map {:?} is {}x{} but image is {}x{}",
                    path.display(),
                    item.label,
                    label_dims.0,
                    label_dims.1,
                    img_dims.0,
                    img_dims.1
                )));
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Decode(format!("manifest encode: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

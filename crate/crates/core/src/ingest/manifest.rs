use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTag {
    pub lat: f64,
    pub lon: f64,
    pub heading_deg: f64,
}

/// One image of a batch. Optional numeric fields fall back to the pipeline
/// configuration when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageManifestEntry {
    pub image_id: String,
    pub point_map_path: PathBuf,
    pub mask_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_height_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fov_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Intrinsics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo: Option<GeoTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_width_m: Option<f64>,
    /// Camera centre in point-map coordinates; the origin when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_centre: Option<[f64; 3]>,
}

impl ImageManifestEntry {
    pub fn new(image_id: impl Into<String>, point_map_path: PathBuf, mask_path: PathBuf) -> Self {
        Self {
            image_id: image_id.into(),
            point_map_path,
            mask_path,
            camera_height_m: None,
            fov_deg: None,
            intrinsics: None,
            geo: None,
            segment_id: None,
            reference_width_m: None,
            camera_centre: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.image_id.is_empty() {
            return Err("empty image_id".into());
        }
        if let Some(h) = self.camera_height_m {
            if !(h.is_finite() && h > 0.0) {
                return Err(format!(
                    "{}: camera_height_m must be > 0, got {h}",
                    self.image_id
                ));
            }
        }
        if let Some(fov) = self.fov_deg {
            if !(fov > 0.0 && fov < 180.0) {
                return Err(format!(
                    "{}: fov_deg must lie in (0, 180), got {fov}",
                    self.image_id
                ));
            }
        }
        if let Some(k) = self.intrinsics {
            if !(k.fx > 0.0 && k.fy > 0.0) {
                return Err(format!(
                    "{}: intrinsics focal lengths must be positive",
                    self.image_id
                ));
            }
        }
        if let Some(w) = self.reference_width_m {
            if !(w.is_finite() && w > 0.0) {
                return Err(format!(
                    "{}: reference_width_m must be > 0, got {w}",
                    self.image_id
                ));
            }
        }
        Ok(())
    }
}

/// Reads a manifest and resolves relative file paths against its directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ImageManifestEntry>, IngestError> {
    let manifest_err = |reason: String| IngestError::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut entries: Vec<ImageManifestEntry> =
        serde_json::from_str(&text).map_err(|e| manifest_err(e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut ids = BTreeSet::new();
    for entry in &mut entries {
        entry.validate().map_err(manifest_err)?;
        if !ids.insert(entry.image_id.clone()) {
            return Err(manifest_err(format!(
                "duplicate image_id '{}'",
                entry.image_id
            )));
        }
        if entry.point_map_path.is_relative() {
            entry.point_map_path = base.join(&entry.point_map_path);
        }
        if entry.mask_path.is_relative() {
            entry.mask_path = base.join(&entry.mask_path);
        }
    }
    Ok(entries)
}

pub fn save_manifest(path: &Path, entries: &[ImageManifestEntry]) -> Result<(), IngestError> {
    let mut text = serde_json::to_string_pretty(entries).map_err(|e| IngestError::Manifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

//! Every tunable of the pipeline in one document.
//!
//! The file form is TOML with one table per stage; every key is optional and
//! falls back to the defaults below.

use serde::{Deserialize, Serialize};

use crate::ingest::ClassMap;
use crate::measure::MeasureConfig;
use crate::netsample::NetworkConfig;
use crate::planefit::PlaneFitConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    /// Road/sidewalk components smaller than this fraction of the image are dropped.
    pub min_region_frac: f64,
    /// Enclosed holes smaller than this fraction of the image are filled.
    pub max_hole_frac: f64,
    pub min_sidewalk_frac: f64,
    pub min_road_frac: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            min_region_frac: 0.001,
            max_hole_frac: 0.0005,
            min_sidewalk_frac: 0.02,
            min_road_frac: 0.05,
        }
    }
}

impl MaskConfig {
    pub fn min_region_px(&self, pixels: usize) -> usize {
        (self.min_region_frac * pixels as f64).round() as usize
    }

    pub fn max_hole_px(&self, pixels: usize) -> usize {
        (self.max_hole_frac * pixels as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("mask.min_region_frac", self.min_region_frac),
            ("mask.max_hole_frac", self.max_hole_frac),
            ("mask.min_sidewalk_frac", self.min_sidewalk_frac),
            ("mask.min_road_frac", self.min_road_frac),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    /// Camera mounting height prior, metres.
    pub h_cam: f64,
    /// Horizontal field of view used when a manifest entry has no intrinsics.
    pub fov_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            h_cam: 2.5,
            fov_deg: 90.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub camera: CameraConfig,
    pub class_map: ClassMap,
    pub mask: MaskConfig,
    pub plane: PlaneFitConfig,
    pub measure: MeasureConfig,
    pub network: NetworkConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.camera.h_cam.is_finite() && self.camera.h_cam > 0.0) {
            return Err(format!(
                "camera.h_cam must be > 0, got {}",
                self.camera.h_cam
            ));
        }
        if !(self.camera.fov_deg > 0.0 && self.camera.fov_deg < 180.0) {
            return Err(format!(
                "camera.fov_deg must lie in (0, 180), got {}",
                self.camera.fov_deg
            ));
        }
        let overlap = self.class_map.overlapping();
        if !overlap.is_empty() {
            return Err(format!(
                "class_map assigns ids {overlap:?} to both road and sidewalk"
            ));
        }
        self.mask.validate()?;
        self.plane.validate()?;
        self.measure.validate()?;
        self.network.validate()
    }
}

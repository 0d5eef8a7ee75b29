//! Per-image orchestration and the batch runner.
//!
//! mask clean-up → support gate → plane fit → scale calibration → width.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{
    flat_ground_depth, intrinsics_from_fov, predicted_camera_height, scale_factor, unproject_depth,
    CalibrationError, CameraModel, ScaleCalibration,
};
use crate::config::PipelineConfig;
use crate::ingest::{
    check_pairing, check_support, load_geometry, load_mask, postprocess_mask, Geometry,
    ImageManifestEntry, IngestError, PointMap, SemanticClass, SemanticMask, SupportDecision,
    SupportRejection,
};
use crate::measure::{
    measure_width, MeasureError, MeasurementStatus, RejectReason, WidthMeasurement,
};
use crate::planefit::{fit_ground_plane, PlaneFitError};

/// Where the 3D geometry of an image comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometrySource {
    /// `(H, W, 3)` point map used as is.
    PointMap,
    /// `(H, W, 1)` depth unprojected through the camera intrinsics.
    DepthMap,
    /// Level camera over flat ground at the prior height; the geometry file
    /// is not read.
    PinholeFlat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Geometry is taken to be metric already (scale fixed to 1).
    Native,
    /// Scale from the camera mounting height.
    CameraHeight,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub geometry: GeometrySource,
    pub calibration: CalibrationMode,
    /// Camera height that overrides manifest values and the configuration.
    pub h_cam_override: Option<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            geometry: GeometrySource::PointMap,
            calibration: CalibrationMode::CameraHeight,
            h_cam_override: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("wrong geometry kind: expected {expected}, found {found}")]
    WrongGeometryKind {
        expected: &'static str,
        found: &'static str,
    },
    #[error(transparent)]
    Camera(#[from] CalibrationError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Per-image RNG seed from the global seed and the image id.
pub fn derive_seed(global: u64, image_id: &str) -> u64 {
    // splitmix64 finaliser
    let mut z = global ^ fnv1a(image_id.as_bytes());
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Camera height for an entry: override, then manifest, then configuration.
pub fn resolve_camera_height(
    entry: &ImageManifestEntry,
    config: &PipelineConfig,
    options: &RunOptions,
) -> f64 {
    options
        .h_cam_override
        .or(entry.camera_height_m)
        .unwrap_or(config.camera.h_cam)
}

/// Camera model for an entry from its intrinsics, or its field of view.
pub fn camera_for(
    entry: &ImageManifestEntry,
    config: &PipelineConfig,
    width: usize,
    height: usize,
) -> Result<CameraModel, CalibrationError> {
    let mut cam = match entry.intrinsics {
        Some(k) => CameraModel::from_intrinsics(k, width, height)?,
        None => intrinsics_from_fov(
            entry.fov_deg.unwrap_or(config.camera.fov_deg),
            width,
            height,
        )?,
    };
    if let Some(c) = entry.camera_centre {
        cam.centre = Vector3::from(c);
    }
    Ok(cam)
}

fn geometry_name(g: &Geometry) -> &'static str {
    match g {
        Geometry::PointMap(_) => "point_map",
        Geometry::Depth(_) => "depth_map",
    }
}

/// Loads the point map for an entry according to the geometry source.
pub fn load_entry_geometry(
    entry: &ImageManifestEntry,
    mask: &SemanticMask,
    config: &PipelineConfig,
    options: &RunOptions,
) -> Result<PointMap, PipelineError> {
    match options.geometry {
        GeometrySource::PointMap => match load_geometry(&entry.point_map_path)? {
            Geometry::PointMap(p) => Ok(p),
            other => Err(PipelineError::WrongGeometryKind {
                expected: "point_map",
                found: geometry_name(&other),
            }),
        },
        GeometrySource::DepthMap => match load_geometry(&entry.point_map_path)? {
            Geometry::Depth(d) => {
                check_pairing(mask, (d.width(), d.height()))?;
                let cam = camera_for(entry, config, d.width(), d.height())?;
                Ok(unproject_depth(&d, &cam)?)
            }
            other => Err(PipelineError::WrongGeometryKind {
                expected: "depth_map",
                found: geometry_name(&other),
            }),
        },
        GeometrySource::PinholeFlat => {
            let cam = camera_for(entry, config, mask.width(), mask.height())?;
            let h_cam = resolve_camera_height(entry, config, options);
            Ok(unproject_depth(&flat_ground_depth(&cam, h_cam), &cam)?)
        }
    }
}

/// Runs the full pipeline on one manifest entry.
///
/// File and contract problems are errors; everything the pipeline decides
/// against is a rejected [`WidthMeasurement`].
pub fn process_entry(
    entry: &ImageManifestEntry,
    config: &PipelineConfig,
    options: &RunOptions,
) -> Result<WidthMeasurement, PipelineError> {
    let mask = load_mask(&entry.mask_path, &config.class_map)?;
    let points = load_entry_geometry(entry, &mask, config, options)?;
    check_pairing(&mask, (points.width(), points.height()))?;
    let centre = entry
        .camera_centre
        .map(Vector3::from)
        .unwrap_or_else(Vector3::zeros);
    let h_cam = resolve_camera_height(entry, config, options);
    let seed = derive_seed(config.plane.ransac.seed, &entry.image_id);
    let mut m = measure_image(
        &points,
        &mask,
        &centre,
        h_cam,
        options.calibration,
        config,
        seed,
    )?;
    m.image_id = entry.image_id.clone();
    Ok(m)
}

/// Pipeline on in-memory rasters. `seed` drives RANSAC for this image.
pub fn measure_image(
    points: &PointMap,
    raw_mask: &SemanticMask,
    centre: &Vector3<f64>,
    h_cam: f64,
    calibration: CalibrationMode,
    config: &PipelineConfig,
    seed: u64,
) -> Result<WidthMeasurement, PipelineError> {
    check_pairing(raw_mask, (points.width(), points.height()))?;
    let pixels = raw_mask.width() * raw_mask.height();
    let mask = postprocess_mask(
        raw_mask,
        config.mask.min_region_px(pixels),
        config.mask.max_hole_px(pixels),
    );
    if let SupportDecision::Reject(why) = check_support(
        &mask,
        config.mask.min_sidewalk_frac,
        config.mask.min_road_frac,
    ) {
        let reason = match why {
            SupportRejection::InsufficientSidewalk => RejectReason::InsufficientSidewalk,
            SupportRejection::InsufficientRoad => RejectReason::InsufficientRoad,
        };
        return Ok(WidthMeasurement::rejected("", reason));
    }

    let support: Vec<Vector3<f64>> = (0..mask.height())
        .flat_map(|v| (0..mask.width()).map(move |u| (u, v)))
        .filter(|&(u, v)| {
            matches!(
                mask.get(u, v),
                SemanticClass::Road | SemanticClass::Sidewalk
            )
        })
        .filter_map(|(u, v)| points.get(u, v))
        .collect();

    let mut plane_cfg = config.plane.clone();
    plane_cfg.ransac.seed = seed;
    let ground = match fit_ground_plane(&support, &plane_cfg, centre) {
        Ok(g) => g,
        Err(e) => {
            let reason = match e {
                PlaneFitError::TooFewPoints { .. } => RejectReason::TooFewSupportPoints,
                PlaneFitError::Degenerate | PlaneFitError::NoValidSample { .. } => {
                    RejectReason::DegeneratePlane
                }
                PlaneFitError::InsufficientInliers { .. } => RejectReason::LowInlierRatio,
            };
            let mut m = WidthMeasurement::rejected("", reason);
            if let PlaneFitError::InsufficientInliers { plane, .. } = e {
                m.plane = Some(plane);
            }
            return Ok(m);
        }
    };

    let h_pred = match predicted_camera_height(&ground.plane, centre) {
        Ok(h) => h,
        Err(_) => {
            let mut m = WidthMeasurement::rejected("", RejectReason::CameraOnPlane);
            m.plane = Some(ground);
            return Ok(m);
        }
    };
    let calibration = match calibration {
        CalibrationMode::Native => ScaleCalibration::native(h_pred),
        CalibrationMode::CameraHeight => scale_factor(h_cam, h_pred)?,
    };
    Ok(measure_width(
        points,
        &mask,
        &ground,
        &calibration,
        &config.measure,
    )?)
}

/// Result of one manifest entry: a measurement or the reason it failed.
#[derive(Debug)]
pub struct ImageOutcome {
    pub entry: ImageManifestEntry,
    pub result: Result<WidthMeasurement, PipelineError>,
}

impl ImageOutcome {
    pub fn accepted_width(&self) -> Option<f64> {
        match &self.result {
            Ok(m) if m.is_accepted() => Some(m.width_m),
            _ => None,
        }
    }

    pub fn record(&self) -> MeasurementRecord {
        MeasurementRecord::from_outcome(self)
    }
}

/// Runs entries on a pool of `workers` threads. Output order follows input
/// order regardless of the worker count.
pub fn run_batch<T, F>(entries: &[ImageManifestEntry], workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&ImageManifestEntry) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| entries.par_iter().map(&f).collect())
}

pub fn measure_manifest(
    entries: &[ImageManifestEntry],
    config: &PipelineConfig,
    options: &RunOptions,
    workers: usize,
) -> Vec<ImageOutcome> {
    run_batch(entries, workers, |entry| ImageOutcome {
        entry: entry.clone(),
        result: process_entry(entry, config, options),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Accepted,
    Rejected,
    Failed,
}

/// One line of the per-image JSON-lines output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub image_id: String,
    pub status: RecordStatus,
    pub width_m: Option<f64>,
    pub n_valid_columns: usize,
    pub scale: Option<f64>,
    pub plane_normal: Option<[f64; 3]>,
    pub plane_offset: Option<f64>,
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_width_m: Option<f64>,
}

impl MeasurementRecord {
    pub fn from_outcome(outcome: &ImageOutcome) -> Self {
        let entry = &outcome.entry;
        let mut rec = Self {
            image_id: entry.image_id.clone(),
            status: RecordStatus::Failed,
            width_m: None,
            n_valid_columns: 0,
            scale: None,
            plane_normal: None,
            plane_offset: None,
            reason: None,
            segment_id: entry.segment_id.clone(),
            reference_width_m: entry.reference_width_m,
        };
        match &outcome.result {
            Err(e) => rec.reason = Some(e.to_string()),
            Ok(m) => {
                rec.n_valid_columns = m.n_valid_columns;
                rec.scale = m.scale();
                if let Some(p) = m.plane {
                    rec.plane_normal = Some([p.plane.normal.x, p.plane.normal.y, p.plane.normal.z]);
                    rec.plane_offset = Some(p.plane.offset);
                }
                if m.across_direction.is_some() {
                    rec.width_m = Some(m.width_m);
                }
                match m.status {
                    MeasurementStatus::Accepted => rec.status = RecordStatus::Accepted,
                    MeasurementStatus::Rejected(r) => {
                        rec.status = RecordStatus::Rejected;
                        rec.reason = Some(r.as_str().to_string());
                    }
                }
            }
        }
        rec
    }

    pub fn is_accepted(&self) -> bool {
        self.status == RecordStatus::Accepted
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

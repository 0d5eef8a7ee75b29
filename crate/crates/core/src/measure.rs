//! Column-wise sidewalk width measurement on the fitted ground plane.
//!
//! Each column of a central band contributes one pair of boundary pixels
//! (inner = road side, outer = far side). Their 3D points are projected onto
//! the ground plane, a single across-sidewalk direction is estimated from the
//! spread of the boundary midpoints, and each column's width is the extent of
//! its boundary pair along that direction. The image width is the median of
//! the per-column widths after metric scaling.

use std::fmt;
use std::ops::Range;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::ScaleCalibration;
use crate::ingest::{PointMap, SemanticClass, SemanticMask};
use crate::planefit::{GroundPlane, Plane};
use crate::stats::{mad, median};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureConfig {
    /// Fraction of the image width scanned, centred.
    pub band_fraction: f64,
    pub min_valid_columns: usize,
    pub min_width_m: f64,
    pub max_width_m: f64,
    /// Upper bound on MAD / median of the per-column widths; `None` disables
    /// the check.
    pub max_dispersion: Option<f64>,
    /// Minimum ratio of principal standard deviations of the boundary
    /// midpoints (along-street over across-street).
    pub min_anisotropy: f64,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            band_fraction: 0.5,
            min_valid_columns: 20,
            min_width_m: 0.3,
            max_width_m: 8.0,
            max_dispersion: Some(0.5),
            min_anisotropy: 1.2,
        }
    }
}

impl MeasureConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.band_fraction > 0.0 && self.band_fraction <= 1.0) {
            return Err("measure.band_fraction must lie in (0, 1]".into());
        }
        if self.min_valid_columns < 2 {
            return Err("measure.min_valid_columns must be >= 2".into());
        }
        if !(self.min_width_m >= 0.0 && self.min_width_m < self.max_width_m) {
            return Err("measure width bounds must satisfy 0 <= min_width_m < max_width_m".into());
        }
        if let Some(d) = self.max_dispersion {
            if !(d > 0.0) {
                return Err("measure.max_dispersion must be positive".into());
            }
        }
        if !(self.min_anisotropy >= 1.0) {
            return Err("measure.min_anisotropy must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("band fraction must lie in (0, 1], got {0}")]
    InvalidBandFraction(f64),
    #[error("dimension mismatch between point map {points:?} and mask {mask:?}")]
    DimensionMismatch {
        points: (usize, usize),
        mask: (usize, usize),
    },
}

/// Why a single column did not yield a width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRejection {
    NoSidewalk,
    InvalidPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSample {
    pub column: usize,
    /// `(u, v)` of the road-side boundary pixel.
    pub inner_px: Option<(usize, usize)>,
    pub outer_px: Option<(usize, usize)>,
    /// Boundary points projected onto the ground plane, model units.
    pub inner_3d: Option<Vector3<f64>>,
    pub outer_3d: Option<Vector3<f64>>,
    pub width_model: Option<f64>,
    pub rejection: Option<ColumnRejection>,
}

impl ColumnSample {
    pub fn is_valid(&self) -> bool {
        self.rejection.is_none()
    }

    fn rejected(column: usize, reason: ColumnRejection) -> Self {
        Self {
            column,
            inner_px: None,
            outer_px: None,
            inner_3d: None,
            outer_3d: None,
            width_model: None,
            rejection: Some(reason),
        }
    }

    /// Builds a valid sample from plane-projected boundary points.
    pub fn from_boundaries(column: usize, inner: Vector3<f64>, outer: Vector3<f64>) -> Self {
        Self {
            column,
            inner_px: None,
            outer_px: None,
            inner_3d: Some(inner),
            outer_3d: Some(outer),
            width_model: None,
            rejection: None,
        }
    }

    fn span(&self) -> Option<Vector3<f64>> {
        Some(self.outer_3d? - self.inner_3d?)
    }
}

/// Machine-readable rejection reasons for a whole image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    InsufficientSidewalk,
    InsufficientRoad,
    TooFewSupportPoints,
    DegeneratePlane,
    LowInlierRatio,
    CameraOnPlane,
    InsufficientValidColumns,
    AmbiguousDirection,
    InconsistentColumns,
    ImplausibleWidth,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::InsufficientSidewalk => "insufficient_sidewalk",
            Self::InsufficientRoad => "insufficient_road",
            Self::TooFewSupportPoints => "too_few_support_points",
            Self::DegeneratePlane => "degenerate_plane",
            Self::LowInlierRatio => "low_inlier_ratio",
            Self::CameraOnPlane => "camera_on_plane",
            Self::InsufficientValidColumns => "insufficient_valid_columns",
            Self::AmbiguousDirection => "ambiguous_direction",
            Self::InconsistentColumns => "inconsistent_columns",
            Self::ImplausibleWidth => "implausible_width",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().replace('_', " "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum MeasurementStatus {
    Accepted,
    Rejected(RejectReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WidthMeasurement {
    pub image_id: String,
    /// Median per-column width in metres; 0 when never computed.
    pub width_m: f64,
    /// Median per-column width in model units; 0 when never computed.
    pub width_model: f64,
    pub calibration: Option<ScaleCalibration>,
    pub n_valid_columns: usize,
    pub column_samples: Vec<ColumnSample>,
    pub per_column_widths_m: Vec<f64>,
    pub across_direction: Option<Vector3<f64>>,
    pub status: MeasurementStatus,
    pub plane: Option<GroundPlane>,
}

impl WidthMeasurement {
    /// A measurement rejected before any width was computed.
    pub fn rejected(image_id: impl Into<String>, reason: RejectReason) -> Self {
        Self {
            image_id: image_id.into(),
            width_m: 0.0,
            width_model: 0.0,
            calibration: None,
            n_valid_columns: 0,
            column_samples: Vec::new(),
            per_column_widths_m: Vec::new(),
            across_direction: None,
            status: MeasurementStatus::Rejected(reason),
            plane: None,
        }
    }

    pub fn is_accepted(&self) -> bool {
        self.status == MeasurementStatus::Accepted
    }

    pub fn scale(&self) -> Option<f64> {
        self.calibration.map(|c| c.scale)
    }

    /// Re-applies a different calibration to the same model-space geometry,
    /// producing exactly what [`measure_width`] would with that calibration.
    pub fn recalibrated(&self, calibration: &ScaleCalibration, config: &MeasureConfig) -> Self {
        let mut out = self.clone();
        if self.calibration.is_none() {
            return out;
        }
        out.calibration = Some(*calibration);
        // Without a direction no widths exist and the rejection is scale-free.
        if self.across_direction.is_some() {
            let model_widths: Vec<f64> = self
                .column_samples
                .iter()
                .filter_map(|s| s.width_model)
                .collect();
            out.finalize(&model_widths, calibration, config);
        }
        out
    }

    /// Metric conversion followed by the plausibility and consistency gates.
    fn finalize(
        &mut self,
        model_widths: &[f64],
        calibration: &ScaleCalibration,
        config: &MeasureConfig,
    ) {
        self.calibration = Some(*calibration);
        self.per_column_widths_m = model_widths.iter().map(|w| w * calibration.scale).collect();
        self.width_m = self.width_model * calibration.scale;
        self.status = MeasurementStatus::Accepted;
        if !(self.width_m >= config.min_width_m && self.width_m <= config.max_width_m) {
            self.status = MeasurementStatus::Rejected(RejectReason::ImplausibleWidth);
        }
        if let Some(limit) = config.max_dispersion {
            let spread = mad(model_widths).expect("valid columns present");
            if !(self.width_model > 0.0) || spread / self.width_model > limit {
                self.status = MeasurementStatus::Rejected(RejectReason::InconsistentColumns);
            }
        }
    }
}

/// Picks the sidewalk run of one mask column (top row first).
///
/// The longest run wins; ties go to the run whose lower end is nearer the
/// image bottom. Returns `(inner_row, outer_row)`: the inner end is the one
/// touching road, or the lower end when that is ambiguous.
pub fn select_column_segment(column: &[SemanticClass]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut row = 0;
    while row < column.len() {
        if column[row] != SemanticClass::Sidewalk {
            row += 1;
            continue;
        }
        let start = row;
        while row < column.len() && column[row] == SemanticClass::Sidewalk {
            row += 1;
        }
        let end = row - 1;
        let better = match best {
            None => true,
            Some((s, e)) => (end - start, end) > (e - s, e),
        };
        if better {
            best = Some((start, end));
        }
    }
    let (top, bottom) = best?;
    let road_above = top > 0 && column[top - 1] == SemanticClass::Road;
    let road_below = column.get(bottom + 1) == Some(&SemanticClass::Road);
    if road_above && !road_below {
        Some((top, bottom))
    } else {
        Some((bottom, top))
    }
}

/// Centred column range holding `round(band_fraction · width_px)` columns.
pub fn central_band(width_px: usize, band_fraction: f64) -> Result<Range<usize>, MeasureError> {
    if !(band_fraction > 0.0 && band_fraction <= 1.0) {
        return Err(MeasureError::InvalidBandFraction(band_fraction));
    }
    let len = ((band_fraction * width_px as f64).round() as usize).clamp(1, width_px.max(1));
    let start = (width_px - len) / 2;
    Ok(start..start + len)
}

pub fn project_to_plane(point: &Vector3<f64>, plane: &Plane) -> Vector3<f64> {
    plane.project(point)
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DirectionError {
    #[error("too few boundary samples to estimate a direction")]
    TooFewSamples,
    #[error("ambiguous direction (anisotropy {0:.3})")]
    Ambiguous(f64),
}

/// Unit vector in the plane orthogonal to `normal`.
fn in_plane_basis(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let axis = if normal.x.abs() <= normal.y.abs() && normal.x.abs() <= normal.z.abs() {
        Vector3::x()
    } else if normal.y.abs() <= normal.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let e1 = (axis - normal * normal.dot(&axis)).normalize();
    let e2 = normal.cross(&e1);
    (e1, e2)
}

/// Estimated across-sidewalk direction together with the anisotropy of the
/// boundary midpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcrossDirection {
    pub direction: Vector3<f64>,
    pub anisotropy: f64,
}

/// Direction across the sidewalk, from the principal axis of the in-plane
/// scatter of the boundary midpoints.
///
/// The along-sidewalk axis is the dominant scatter direction; the result is
/// the in-plane unit vector orthogonal to it, signed so that `outer − inner`
/// projects non-negatively on average.
pub fn across_direction(
    samples: &[ColumnSample],
    plane: &Plane,
    min_anisotropy: f64,
) -> Result<AcrossDirection, DirectionError> {
    let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = samples
        .iter()
        .filter(|s| s.is_valid())
        .filter_map(|s| Some((s.inner_3d?, s.outer_3d?)))
        .collect();
    if pairs.len() < 2 {
        return Err(DirectionError::TooFewSamples);
    }
    let n = plane.normal;
    let (e1, e2) = in_plane_basis(&n);
    let mids: Vec<(f64, f64)> = pairs
        .iter()
        .map(|(a, b)| {
            let m = (a + b) / 2.0;
            (m.dot(&e1), m.dot(&e2))
        })
        .collect();
    let count = mids.len() as f64;
    let (mx, my) = mids
        .iter()
        .fold((0.0, 0.0), |(sx, sy), (x, y)| (sx + x, sy + y));
    let (mx, my) = (mx / count, my / count);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in &mids {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let half_trace = (sxx + syy) / 2.0;
    let root = (((sxx - syy) / 2.0).powi(2) + sxy * sxy).sqrt();
    let (major, minor) = (half_trace + root, (half_trace - root).max(0.0));
    if !(major > 0.0) {
        return Err(DirectionError::Ambiguous(1.0));
    }
    let anisotropy = if minor > 0.0 {
        (major / minor).sqrt()
    } else {
        f64::INFINITY
    };
    if anisotropy < min_anisotropy {
        return Err(DirectionError::Ambiguous(anisotropy));
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let along = e1 * theta.cos() + e2 * theta.sin();
    let mut across = n.cross(&along).normalize();
    let mean_span: f64 = pairs.iter().map(|(a, b)| (b - a).dot(&across)).sum::<f64>() / count;
    if mean_span < 0.0 {
        across = -across;
    }
    Ok(AcrossDirection {
        direction: across,
        anisotropy,
    })
}

/// `|(outer − inner) · direction|`, model units.
pub fn column_width(sample: &ColumnSample, direction: &Vector3<f64>) -> Option<f64> {
    sample.span().map(|d| d.dot(direction).abs())
}

/// Measures one image given its fitted plane and calibration.
///
/// Rejections are reported through `status`; the only errors are contract
/// violations (bad band fraction, mismatched rasters).
pub fn measure_width(
    point_map: &PointMap,
    mask: &SemanticMask,
    plane: &GroundPlane,
    calibration: &ScaleCalibration,
    config: &MeasureConfig,
) -> Result<WidthMeasurement, MeasureError> {
    let dims = (point_map.width(), point_map.height());
    if dims != (mask.width(), mask.height()) {
        return Err(MeasureError::DimensionMismatch {
            points: dims,
            mask: (mask.width(), mask.height()),
        });
    }
    let band = central_band(point_map.width(), config.band_fraction)?;
    let mut samples: Vec<ColumnSample> = band
        .map(|u| boundary_sample(point_map, mask, &plane.plane, u))
        .collect();
    let n_valid = samples.iter().filter(|s| s.is_valid()).count();

    let mut out = WidthMeasurement::rejected(String::new(), RejectReason::InsufficientValidColumns);
    out.plane = Some(*plane);
    out.calibration = Some(*calibration);
    out.n_valid_columns = n_valid;
    if n_valid < config.min_valid_columns {
        out.column_samples = samples;
        return Ok(out);
    }

    let across = match across_direction(&samples, &plane.plane, config.min_anisotropy) {
        Ok(a) => a,
        Err(_) => {
            out.status = MeasurementStatus::Rejected(RejectReason::AmbiguousDirection);
            out.column_samples = samples;
            return Ok(out);
        }
    };
    for s in samples.iter_mut().filter(|s| s.is_valid()) {
        s.width_model = column_width(s, &across.direction);
    }
    let model_widths: Vec<f64> = samples.iter().filter_map(|s| s.width_model).collect();
    // Non-empty: n_valid >= min_valid_columns >= 2.
    let centre = median(&model_widths).expect("valid columns present");
    out.across_direction = Some(across.direction);
    out.width_model = centre;
    out.column_samples = samples;
    out.finalize(&model_widths, calibration, config);
    Ok(out)
}

fn boundary_sample(
    point_map: &PointMap,
    mask: &SemanticMask,
    plane: &Plane,
    u: usize,
) -> ColumnSample {
    let column = mask.column(u);
    let Some((inner_row, outer_row)) = select_column_segment(&column) else {
        return ColumnSample::rejected(u, ColumnRejection::NoSidewalk);
    };
    let mut sample = ColumnSample::rejected(u, ColumnRejection::InvalidPoint);
    sample.inner_px = Some((u, inner_row));
    sample.outer_px = Some((u, outer_row));
    if let (Some(inner), Some(outer)) = (point_map.get(u, inner_row), point_map.get(u, outer_row)) {
        sample.inner_3d = Some(plane.project(&inner));
        sample.outer_3d = Some(plane.project(&outer));
        sample.rejection = None;
    }
    sample
}

#[cfg(test)]
mod tests {
    use super::SemanticClass::{Other as O, Road as R, Sidewalk as S};
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;

    fn column_with(runs: &[(usize, usize, SemanticClass)], len: usize) -> Vec<SemanticClass> {
        let mut col = vec![O; len];
        for &(a, b, c) in runs {
            col[a..=b].fill(c);
        }
        col
    }

    #[test]
    fn single_run_with_road_below() {
        let col = column_with(&[(400, 500, S), (501, 639, R)], 640);
        assert_eq!(select_column_segment(&col), Some((500, 400)));
    }

    #[test]
    fn road_above_flips_inner() {
        let col = column_with(&[(0, 99, R), (100, 150, S)], 640);
        assert_eq!(select_column_segment(&col), Some((100, 150)));
    }

    #[test]
    fn longest_run_wins() {
        let col = column_with(&[(100, 179, S), (300, 319, S)], 640);
        assert_eq!(select_column_segment(&col), Some((179, 100)));
    }

    #[test]
    fn tie_goes_to_lower_run() {
        let col = column_with(&[(100, 150, S), (400, 450, S)], 640);
        assert_eq!(select_column_segment(&col), Some((450, 400)));
    }

    #[test]
    fn no_sidewalk_no_segment() {
        assert_eq!(
            select_column_segment(&column_with(&[(10, 20, R)], 64)),
            None
        );
        let col = column_with(&[(60, 63, S)], 64);
        assert_eq!(select_column_segment(&col), Some((63, 60)));
    }

    #[test]
    fn band_examples() {
        assert_eq!(central_band(640, 0.5).unwrap(), 160..480);
        assert_eq!(central_band(640, 1.0).unwrap(), 0..640);
        assert_eq!(
            central_band(640, 0.0),
            Err(MeasureError::InvalidBandFraction(0.0))
        );
        assert!(central_band(640, 1.5).is_err());
    }

    #[test]
    fn projection_examples() {
        let plane = Plane {
            normal: Vector3::new(0.0, 1.0, 0.0),
            offset: 0.0,
        };
        assert_eq!(
            project_to_plane(&Vector3::new(0.0, 2.0, 0.0), &plane),
            Vector3::zeros()
        );
        let on = Vector3::new(3.0, 0.0, -1.0);
        assert_eq!(project_to_plane(&on, &plane), on);
    }

    #[test]
    fn column_width_examples() {
        let s = |d: Vector3<f64>| ColumnSample::from_boundaries(0, Vector3::zeros(), d);
        let z = Vector3::z();
        assert_eq!(column_width(&s(Vector3::new(0.0, 0.0, 2.0)), &z), Some(2.0));
        assert_eq!(column_width(&s(Vector3::new(1.0, 0.0, 0.0)), &z), Some(0.0));
        assert_eq!(column_width(&s(Vector3::new(1.0, 0.0, 1.0)), &z), Some(1.0));
    }

    /// Boundary pairs on two lines parallel to `along` inside the plane
    /// y = 0, separated by `width` along `across`.
    fn parallel_boundaries(
        along: Vector3<f64>,
        across: Vector3<f64>,
        width: f64,
    ) -> Vec<ColumnSample> {
        (0..30)
            .map(|i| {
                let t = i as f64 * 0.2 - 3.0;
                // Columns cut the strip obliquely: outer is shifted along-street.
                let inner = along * t + across * 1.0;
                let outer = along * (t + 0.4) + across * (1.0 + width);
                ColumnSample::from_boundaries(i, inner, outer)
            })
            .collect()
    }

    #[test]
    fn direction_of_parallel_lines() {
        let ground = Plane {
            normal: Vector3::y(),
            offset: 0.0,
        };
        let samples = parallel_boundaries(Vector3::x(), Vector3::z(), 2.0);
        let dir = across_direction(&samples, &ground, 1.2).unwrap().direction;
        // Oracle: orthogonal to the along axis and to the normal.
        assert!(dir.dot(&Vector3::x()).abs() < 1e-6);
        assert!(dir.dot(&Vector3::y()).abs() < 1e-12);
        assert!((dir - Vector3::z()).norm() < 1e-6);
        for s in &samples {
            assert!((column_width(s, &dir).unwrap() - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn direction_rotates_with_scene() {
        let ground = Plane {
            normal: Vector3::y(),
            offset: 0.0,
        };
        let rot =
            Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::y()), 30f64.to_radians());
        let samples = parallel_boundaries(rot * Vector3::x(), rot * Vector3::z(), 1.5);
        let dir = across_direction(&samples, &ground, 1.2).unwrap().direction;
        let expected = rot * Vector3::z();
        assert!((dir - expected).norm() < 1e-6);
        let angle = dir.dot(&Vector3::z()).clamp(-1.0, 1.0).acos().to_degrees();
        assert!((angle - 30.0).abs() < 1e-6);
    }

    #[test]
    fn circular_midpoints_are_ambiguous() {
        let ground = Plane {
            normal: Vector3::y(),
            offset: 0.0,
        };
        let samples: Vec<_> = (0..36)
            .map(|i| {
                let a = (i as f64 * 10.0).to_radians();
                let m = Vector3::new(a.cos(), 0.0, a.sin());
                ColumnSample::from_boundaries(i, m - Vector3::z() * 0.5, m + Vector3::z() * 0.5)
            })
            .collect();
        assert!(matches!(
            across_direction(&samples, &ground, 1.2),
            Err(DirectionError::Ambiguous(_))
        ));
    }

    proptest! {
        #[test]
        fn projection_lands_on_plane(
            n in prop::array::uniform3(-1.0f64..1.0),
            d in -10.0f64..10.0,
            x in prop::array::uniform3(-100.0f64..100.0),
        ) {
            let n = Vector3::from(n);
            prop_assume!(n.norm() > 1e-3);
            let plane = Plane { normal: n.normalize(), offset: d };
            let p = project_to_plane(&Vector3::from(x), &plane);
            prop_assert!(plane.signed_distance(&p).abs() < 1e-9);
        }
    }
}

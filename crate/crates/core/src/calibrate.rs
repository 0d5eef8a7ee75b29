//! Metric scale from camera mounting height, and pinhole camera helpers.
//!
//! Reconstructed geometry has an unknown global scale. The distance from the
//! camera centre to the fitted ground plane, `h_pred = |n·c + d|`, is compared
//! with the known mounting height to give `s = h_cam / h_pred` metres per
//! model unit.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{DepthMap, Intrinsics, PointMap};
use crate::planefit::Plane;

/// Below this the camera is considered to lie on the ground plane.
pub const MIN_CAMERA_HEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("camera on ground plane (predicted height {0:e} model units)")]
    CameraOnPlane(f64),
    #[error("scale factor needs positive heights, got h_cam={h_cam}, h_pred={h_pred}")]
    NonPositiveHeight { h_cam: f64, h_pred: f64 },
    #[error("field of view must lie in (0, 180) degrees, got {0}")]
    InvalidFov(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("dimension mismatch: depth is {depth:?}, camera is {camera:?} (width, height)")]
    DimensionMismatch {
        depth: (usize, usize),
        camera: (usize, usize),
    },
}

/// Pinhole camera; `centre` is the optical centre in model coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub centre: Vector3<f64>,
}

impl CameraModel {
    pub fn from_intrinsics(
        k: Intrinsics,
        width: usize,
        height: usize,
    ) -> Result<Self, CalibrationError> {
        let cam = Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width,
            height,
            centre: Vector3::zeros(),
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        let bad = |m: &str| Err(CalibrationError::InvalidCamera(m.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64)
        {
            return bad("principal point outside the image");
        }
        Ok(())
    }

    /// Direction of the ray through pixel `(u, v)`, scaled to unit depth.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleCalibration {
    /// Known camera mounting height, metres.
    pub h_cam: f64,
    /// Camera height above the fitted plane, model units.
    pub h_pred: f64,
    /// Metres per model unit.
    pub scale: f64,
}

impl ScaleCalibration {
    /// Geometry already in metres: scale fixed to exactly one.
    pub fn native(h_pred: f64) -> Self {
        Self {
            h_cam: h_pred,
            h_pred,
            scale: 1.0,
        }
    }

    /// Same predicted height, different prior.
    pub fn with_camera_height(&self, h_cam: f64) -> Result<Self, CalibrationError> {
        scale_factor(h_cam, self.h_pred)
    }
}

pub fn predicted_camera_height(
    plane: &Plane,
    centre: &Vector3<f64>,
) -> Result<f64, CalibrationError> {
    let h = plane.signed_distance(centre).abs();
    if !(h >= MIN_CAMERA_HEIGHT) {
        return Err(CalibrationError::CameraOnPlane(h));
    }
    Ok(h)
}

pub fn scale_factor(h_cam: f64, h_pred: f64) -> Result<ScaleCalibration, CalibrationError> {
    if !(h_cam > 0.0 && h_pred > 0.0 && h_cam.is_finite() && h_pred.is_finite()) {
        return Err(CalibrationError::NonPositiveHeight { h_cam, h_pred });
    }
    Ok(ScaleCalibration {
        h_cam,
        h_pred,
        scale: h_cam / h_pred,
    })
}

/// Square-pixel camera with the principal point at the image centre
/// (pixel-centre convention, `(dim - 1) / 2`).
pub fn intrinsics_from_fov(
    fov_deg: f64,
    width: usize,
    height: usize,
) -> Result<CameraModel, CalibrationError> {
    if !(fov_deg > 0.0 && fov_deg < 180.0) {
        return Err(CalibrationError::InvalidFov(fov_deg));
    }
    if width == 0 || height == 0 {
        return Err(CalibrationError::InvalidCamera("zero-sized image".into()));
    }
    let fx = width as f64 / (2.0 * (fov_deg.to_radians() / 2.0).tan());
    Ok(CameraModel {
        fx,
        fy: fx,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
        width,
        height,
        centre: Vector3::zeros(),
    })
}

/// Back-projects every valid depth to `((u−cx)·z/fx, (v−cy)·z/fy, z)`.
pub fn unproject_depth(depth: &DepthMap, cam: &CameraModel) -> Result<PointMap, CalibrationError> {
    let dims = (depth.width(), depth.height());
    if dims != (cam.width, cam.height) {
        return Err(CalibrationError::DimensionMismatch {
            depth: dims,
            camera: (cam.width, cam.height),
        });
    }
    let points = (0..cam.height)
        .flat_map(|v| (0..cam.width).map(move |u| (u, v)))
        .map(|(u, v)| match depth.get(u, v) {
            Some(z) => unproject_pixel(cam, u as f64, v as f64, z)
                .map(|c| c as f32)
                .into(),
            None => [f32::NAN; 3],
        })
        .collect();
    Ok(PointMap::new(cam.width, cam.height, points))
}

pub fn unproject_pixel(cam: &CameraModel, u: f64, v: f64, z: f64) -> Vector3<f64> {
    Vector3::new((u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z)
}

/// Pixel coordinates and depth of a camera-frame point.
pub fn project(cam: &CameraModel, p: &Vector3<f64>) -> (f64, f64, f64) {
    (
        cam.fx * p.x / p.z + cam.cx,
        cam.fy * p.y / p.z + cam.cy,
        p.z,
    )
}

/// Depth of a level camera at height `h_cam` above flat ground (y pointing
/// down). Pixels at or above the horizon get no depth.
pub fn flat_ground_depth(cam: &CameraModel, h_cam: f64) -> DepthMap {
    let depth = (0..cam.height)
        .flat_map(|v| {
            let dy = (v as f64 - cam.cy) / cam.fy;
            let z = if dy > 0.0 {
                (h_cam / dy) as f32
            } else {
                f32::NAN
            };
            std::iter::repeat_n(z, cam.width)
        })
        .collect();
    DepthMap::new(cam.width, cam.height, depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn camera_height_examples() {
        let ground = Plane {
            normal: Vector3::new(0.0, 1.0, 0.0),
            offset: 0.0,
        };
        assert_eq!(
            predicted_camera_height(&ground, &Vector3::new(0.0, 2.5, 0.0)),
            Ok(2.5)
        );
        assert!(matches!(
            predicted_camera_height(&ground, &Vector3::new(4.0, 0.0, -1.0)),
            Err(CalibrationError::CameraOnPlane(_))
        ));
        let tilted = Plane {
            normal: Vector3::new(0.0, 0.6, 0.8),
            offset: -1.0,
        };
        let h = predicted_camera_height(&tilted, &Vector3::new(0.0, 1.0, 2.0)).unwrap();
        assert!((h - 1.2).abs() < 1e-12);
    }

    #[test]
    fn scale_examples() {
        assert_eq!(scale_factor(2.5, 2.5).unwrap().scale, 1.0);
        assert_eq!(scale_factor(2.5, 1.25).unwrap().scale, 2.0);
        assert!(scale_factor(2.5, 0.0).is_err());
        assert!(scale_factor(-1.0, 1.0).is_err());
        assert_eq!(ScaleCalibration::native(0.37).scale, 1.0);
    }

    #[test]
    fn fov_examples() {
        let cam = intrinsics_from_fov(90.0, 640, 640).unwrap();
        assert!((cam.fx - 320.0).abs() < 1e-9);
        let cam = intrinsics_from_fov(90.0, 640, 480).unwrap();
        assert!((cam.fx - 320.0).abs() < 1e-9 && cam.fy == cam.fx);
        assert_eq!(cam.cx, 319.5);
        assert_eq!(cam.cy, 239.5);
        assert_eq!(cam.centre, Vector3::zeros());
        assert_eq!(
            intrinsics_from_fov(180.0, 640, 640),
            Err(CalibrationError::InvalidFov(180.0))
        );
        assert!(intrinsics_from_fov(0.0, 640, 640).is_err());
    }

    #[test]
    fn unprojection_examples() {
        let cam = CameraModel {
            fx: 100.0,
            fy: 100.0,
            cx: 2.0,
            cy: 1.0,
            width: 4,
            height: 3,
            centre: Vector3::zeros(),
        };
        assert_eq!(
            unproject_pixel(&cam, 2.0, 1.0, 5.0),
            Vector3::new(0.0, 0.0, 5.0)
        );
        assert_eq!(
            unproject_pixel(&cam, 102.0, 1.0, 2.0),
            Vector3::new(2.0, 0.0, 2.0)
        );

        let mut z = vec![3.0f32; 12];
        z[5] = f32::NAN;
        z[6] = -1.0;
        let pm = unproject_depth(&DepthMap::new(4, 3, z), &cam).unwrap();
        assert!(!pm.is_valid(1, 1) && !pm.is_valid(2, 1));
        assert_eq!(pm.get(2, 1 + 1).unwrap().z, 3.0);

        let wrong = DepthMap::new(3, 3, vec![1.0; 9]);
        assert!(matches!(
            unproject_depth(&wrong, &cam),
            Err(CalibrationError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn flat_depth_lies_on_ground() {
        let cam = intrinsics_from_fov(90.0, 64, 64).unwrap();
        let depth = flat_ground_depth(&cam, 2.5);
        let pm = unproject_depth(&depth, &cam).unwrap();
        assert!(!pm.is_valid(0, 0));
        let p = pm.get(10, 50).unwrap();
        assert!((p.y - 2.5).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn project_unproject_round_trip(
            depths in prop::collection::vec(0.1f32..100.0, 12),
        ) {
            let cam = intrinsics_from_fov(75.0, 4, 3).unwrap();
            let d = DepthMap::new(4, 3, depths.clone());
            for v in 0..3 {
                for u in 0..4 {
                    let z = d.get(u, v).unwrap();
                    let p = unproject_pixel(&cam, u as f64, v as f64, z);
                    let (pu, pv, pz) = project(&cam, &p);
                    prop_assert_eq!(pz, z);
                    prop_assert!((pu - u as f64).abs() < 1e-9 && (pv - v as f64).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn scale_is_linear_in_camera_height(h in 0.1f64..10.0, h_pred in 0.01f64..100.0) {
            let one = scale_factor(h, h_pred).unwrap().scale;
            let two = scale_factor(2.0 * h, h_pred).unwrap().scale;
            prop_assert!((two - 2.0 * one).abs() <= 1e-12 * two);
        }
    }
}

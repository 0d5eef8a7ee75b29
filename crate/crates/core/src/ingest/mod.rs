//! Interchange formats: point/depth tensors, semantic masks and image manifests.

mod manifest;
mod mask;
mod tensor;

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use thiserror::Error;

pub use manifest::{load_manifest, save_manifest, GeoTag, ImageManifestEntry, Intrinsics};
pub use mask::{
    check_support, load_mask, postprocess_mask, save_mask, ClassMap, SemanticClass, SemanticMask,
    SupportDecision, SupportRejection,
};
pub use tensor::{encode_tensor, load_tensor, save_tensor, Tensor3};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("{path}: wrong rank: expected (H, W, C), found shape {shape:?}")]
    WrongRank { path: PathBuf, shape: Vec<usize> },
    #[error("{path}: wrong last dimension: expected {expected}, found {found}")]
    WrongLastDim {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{path}: unsupported element type '{descr}' (only float32 is accepted)")]
    UnsupportedDtype { path: PathBuf, descr: String },
    #[error("{path}: zero-sized dimension")]
    EmptyDimension { path: PathBuf },
    #[error("{path}: unreadable raster: {reason}")]
    Raster { path: PathBuf, reason: String },
    #[error("dimension mismatch: mask is {mask:?}, geometry is {geometry:?} (width, height)")]
    DimensionMismatch {
        mask: (usize, usize),
        geometry: (usize, usize),
    },
    #[error("{path}: invalid manifest: {reason}")]
    Manifest { path: PathBuf, reason: String },
}

/// Dense per-pixel 3D points in model units (arbitrary global scale).
#[derive(Debug, Clone)]
pub struct PointMap {
    width: usize,
    height: usize,
    points: Vec<[f32; 3]>,
    valid: Vec<bool>,
}

impl PointMap {
    /// Builds a point map from row-major points; validity follows finiteness.
    ///
    /// Panics if `points.len() != width * height` or a dimension is zero.
    pub fn new(width: usize, height: usize, points: Vec<[f32; 3]>) -> Self {
        assert!(
            width > 0 && height > 0,
            "point map dimensions must be positive"
        );
        assert_eq!(points.len(), width * height, "point map payload length");
        let valid = points
            .iter()
            .map(|p| p.iter().all(|c| c.is_finite()))
            .collect();
        Self {
            width,
            height,
            points,
            valid,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn points(&self) -> &[[f32; 3]] {
        &self.points
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.valid[v * self.width + u]
    }

    /// Point at column `u`, row `v`, or `None` when invalid.
    pub fn get(&self, u: usize, v: usize) -> Option<Vector3<f64>> {
        let i = v * self.width + u;
        self.valid[i].then(|| {
            let p = self.points[i];
            Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)
        })
    }

    /// Multiplies every coordinate by `k`.
    pub fn scaled(&self, k: f32) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| [p[0] * k, p[1] * k, p[2] * k])
            .collect();
        Self::new(self.width, self.height, points)
    }

    pub fn to_tensor(&self) -> Tensor3 {
        let data = self.points.iter().flat_map(|p| p.iter().copied()).collect();
        Tensor3::new(self.height, self.width, 3, data)
    }

    /// Bitwise equality of dimensions and coordinates.
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.to_tensor().bits_eq(&other.to_tensor())
    }
}

/// Per-pixel depth along the optical axis. Pixels with non-finite or
/// non-positive depth are invalid.
#[derive(Debug, Clone)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depth: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, depth: Vec<f32>) -> Self {
        assert!(
            width > 0 && height > 0,
            "depth map dimensions must be positive"
        );
        assert_eq!(depth.len(), width * height, "depth map payload length");
        Self {
            width,
            height,
            depth,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.depth
    }

    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let z = self.depth[v * self.width + u];
        (z.is_finite() && z > 0.0).then_some(z as f64)
    }

    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3::new(self.height, self.width, 1, self.depth.clone())
    }
}

/// Geometry tensor contents, told apart by the trailing dimension.
#[derive(Debug, Clone)]
pub enum Geometry {
    PointMap(PointMap),
    Depth(DepthMap),
}

impl Geometry {
    pub fn dimensions(&self) -> (usize, usize) {
        match self {
            Geometry::PointMap(p) => (p.width(), p.height()),
            Geometry::Depth(d) => (d.width(), d.height()),
        }
    }
}

fn non_empty(path: &Path, t: &Tensor3) -> Result<(), IngestError> {
    if t.height == 0 || t.width == 0 {
        return Err(IngestError::EmptyDimension {
            path: path.to_path_buf(),
        });
    }
    Ok(())
}

fn point_map_from_tensor(t: Tensor3) -> PointMap {
    let points = t.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    PointMap::new(t.width, t.height, points)
}

pub fn load_point_map(path: &Path) -> Result<PointMap, IngestError> {
    let t = load_tensor(path)?;
    if t.channels != 3 {
        return Err(IngestError::WrongLastDim {
            path: path.to_path_buf(),
            expected: 3,
            found: t.channels,
        });
    }
    non_empty(path, &t)?;
    Ok(point_map_from_tensor(t))
}

pub fn load_depth_map(path: &Path) -> Result<DepthMap, IngestError> {
    let t = load_tensor(path)?;
    if t.channels != 1 {
        return Err(IngestError::WrongLastDim {
            path: path.to_path_buf(),
            expected: 1,
            found: t.channels,
        });
    }
    non_empty(path, &t)?;
    Ok(DepthMap::new(t.width, t.height, t.data))
}

/// Loads either kind of geometry tensor.
pub fn load_geometry(path: &Path) -> Result<Geometry, IngestError> {
    let t = load_tensor(path)?;
    non_empty(path, &t)?;
    match t.channels {
        3 => Ok(Geometry::PointMap(point_map_from_tensor(t))),
        1 => Ok(Geometry::Depth(DepthMap::new(t.width, t.height, t.data))),
        found => Err(IngestError::WrongLastDim {
            path: path.to_path_buf(),
            expected: 3,
            found,
        }),
    }
}

pub fn save_point_map(path: &Path, map: &PointMap) -> Result<(), IngestError> {
    save_tensor(path, &map.to_tensor())
}

pub fn save_depth_map(path: &Path, map: &DepthMap) -> Result<(), IngestError> {
    save_tensor(path, &map.to_tensor())
}

/// Checks that a mask and its geometry describe the same pixel grid.
pub fn check_pairing(mask: &SemanticMask, geometry: (usize, usize)) -> Result<(), IngestError> {
    let mask_dims = (mask.width(), mask.height());
    if mask_dims != geometry {
        return Err(IngestError::DimensionMismatch {
            mask: mask_dims,
            geometry,
        });
    }
    Ok(())
}

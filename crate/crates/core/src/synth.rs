//! Synthetic street scenes with exact ground truth.
//!
//! World frame: `Y` up, ground at `Y = 0`, street running along `Z`. The
//! camera sits at height `camera_height_m` above the road centreline and
//! looks across the street towards `+X` (yaw rotates towards `+Z`, negative
//! pitch looks down). Laterally the layout is road up to the curb at
//! `road_width_m / 2`, then a sidewalk strip of exactly `sidewalk_width_m`,
//! then a vertical building facade. Each pixel ray is cast against the
//! ground and the facade; points are emitted in the camera frame (x right,
//! y down, z forward) multiplied by `global_scale`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{intrinsics_from_fov, CameraModel};
use crate::ingest::{
    save_depth_map, save_manifest, save_mask, save_point_map, DepthMap, ImageManifestEntry,
    IngestError, PointMap, SemanticClass, SemanticMask,
};
use crate::planefit::Plane;

/// Image-space rectangle `[u0, u1) × [v0, v1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRect {
    pub u0: usize,
    pub v0: usize,
    pub u1: usize,
    pub v1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub sidewalk_width_m: f64,
    pub camera_height_m: f64,
    pub camera_pitch_deg: f64,
    pub camera_yaw_deg: f64,
    pub road_width_m: f64,
    pub global_scale: f64,
    /// Standard deviation of radial noise as a fraction of the range.
    pub noise_sigma_frac: f64,
    /// Regions relabelled "other" in the mask.
    pub occlusion_boxes: Vec<PixelRect>,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            sidewalk_width_m: 2.0,
            camera_height_m: 2.5,
            camera_pitch_deg: -5.0,
            camera_yaw_deg: 0.0,
            road_width_m: 6.0,
            global_scale: 1.0,
            noise_sigma_frac: 0.0,
            occlusion_boxes: Vec::new(),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if !(self.sidewalk_width_m > 0.0 && self.road_width_m > 0.0) {
            return bad("widths must be positive");
        }
        if !(self.camera_height_m > 0.0) {
            return bad("camera must be above the ground");
        }
        if !(self.noise_sigma_frac >= 0.0) {
            return bad("noise_sigma_frac must be >= 0");
        }
        if !(self.global_scale > 0.0 && self.global_scale.is_finite()) {
            return bad("global_scale must be positive");
        }
        Ok(())
    }

    pub fn curb_offset_m(&self) -> f64 {
        self.road_width_m / 2.0
    }

    pub fn facade_offset_m(&self) -> f64 {
        self.curb_offset_m() + self.sidewalk_width_m
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("no ground pixels in view")]
    NoGroundInView,
    #[error("no sidewalk pixels in view")]
    NoSidewalkInView,
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Exact description of a generated scene in emitted (scaled camera) units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: String,
    pub sidewalk_width_m: f64,
    pub camera_height_m: f64,
    pub global_scale: f64,
    /// Camera-to-plane distance in emitted units.
    pub emitted_camera_height: f64,
    pub plane: Plane,
    pub camera_pitch_deg: f64,
    pub camera_yaw_deg: f64,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub points: PointMap,
    pub depth: DepthMap,
    pub mask: SemanticMask,
    pub truth: GroundTruth,
}

/// Camera axes expressed in world coordinates.
struct Pose {
    right: Vector3<f64>,
    down: Vector3<f64>,
    forward: Vector3<f64>,
}

impl Pose {
    fn new(pitch_deg: f64, yaw_deg: f64) -> Self {
        let (p, y) = (pitch_deg.to_radians(), yaw_deg.to_radians());
        let forward = Vector3::new(p.cos() * y.cos(), p.sin(), p.cos() * y.sin());
        let right = Vector3::new(-y.sin(), 0.0, y.cos());
        let down = forward.cross(&right);
        Self {
            right,
            down,
            forward,
        }
    }

    fn to_world(&self, c: &Vector3<f64>) -> Vector3<f64> {
        self.right * c.x + self.down * c.y + self.forward * c.z
    }

    fn to_camera(&self, w: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(w.dot(&self.right), w.dot(&self.down), w.dot(&self.forward))
    }
}

pub fn generate_scene(spec: &SceneSpec, cam: &CameraModel) -> Result<Scene, SynthError> {
    spec.validate()?;
    let pose = Pose::new(spec.camera_pitch_deg, spec.camera_yaw_deg);
    let h = spec.camera_height_m;
    let (curb, facade) = (spec.curb_offset_m(), spec.facade_offset_m());
    let k = spec.global_scale;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = (spec.noise_sigma_frac > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma_frac).expect("finite sigma"));

    let n = cam.width * cam.height;
    let mut points = Vec::with_capacity(n);
    let mut depth = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    for v in 0..cam.height {
        for u in 0..cam.width {
            let ray = cam.ray(u as f64, v as f64);
            let dir = pose.to_world(&ray);
            let t_ground = (dir.y < 0.0).then(|| h / -dir.y);
            let t_facade = (dir.x > 0.0).then(|| facade / dir.x);
            let (t, class) = match (t_ground, t_facade) {
                (Some(tg), tf) if tf.is_none_or(|tf| tg < tf) => {
                    let x = dir.x * tg;
                    let class = if x < curb {
                        SemanticClass::Road
                    } else if x < facade {
                        SemanticClass::Sidewalk
                    } else {
                        SemanticClass::Other
                    };
                    (Some(tg), class)
                }
                (_, Some(tf)) => (Some(tf), SemanticClass::Other),
                _ => (None, SemanticClass::Other),
            };
            classes.push(class);
            match t {
                Some(t) => {
                    let jitter = noise.map_or(1.0, |d| 1.0 + d.sample(&mut rng));
                    let p = ray * (t * jitter * k);
                    points.push([p.x as f32, p.y as f32, p.z as f32]);
                    depth.push(p.z as f32);
                }
                None => {
                    points.push([f32::NAN; 3]);
                    depth.push(f32::NAN);
                }
            }
        }
    }

    let mut mask = SemanticMask::new(cam.width, cam.height, classes);
    for r in &spec.occlusion_boxes {
        for v in r.v0..r.v1.min(cam.height) {
            for u in r.u0..r.u1.min(cam.width) {
                mask.set(u, v, SemanticClass::Other);
            }
        }
    }
    if mask.count(SemanticClass::Road) + mask.count(SemanticClass::Sidewalk) == 0 {
        return Err(SynthError::NoGroundInView);
    }
    if mask.count(SemanticClass::Sidewalk) == 0 {
        return Err(SynthError::NoSidewalkInView);
    }

    let normal = pose.to_camera(&Vector3::y());
    let truth = GroundTruth {
        image_id: String::new(),
        sidewalk_width_m: spec.sidewalk_width_m,
        camera_height_m: h,
        global_scale: k,
        emitted_camera_height: h * k,
        plane: Plane {
            normal,
            offset: h * k,
        },
        camera_pitch_deg: spec.camera_pitch_deg,
        camera_yaw_deg: spec.camera_yaw_deg,
    };
    Ok(Scene {
        points: PointMap::new(cam.width, cam.height, points),
        depth: DepthMap::new(cam.width, cam.height, depth),
        mask,
        truth,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOptions {
    pub n_scenes: usize,
    pub width_range_m: (f64, f64),
    pub seed: u64,
    pub image_width: usize,
    pub image_height: usize,
    pub fov_deg: f64,
    pub camera_height_m: f64,
    pub road_width_m: f64,
    pub noise_sigma_frac: f64,
    pub global_scale_range: (f64, f64),
    pub pitch_range_deg: (f64, f64),
    pub yaw_range_deg: (f64, f64),
    /// Also write `(H, W, 1)` depth tensors and a depth manifest.
    pub emit_depth: bool,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            n_scenes: 100,
            width_range_m: (0.56, 3.94),
            seed: 0,
            image_width: 1024,
            image_height: 1024,
            fov_deg: 90.0,
            camera_height_m: 2.5,
            road_width_m: 6.0,
            noise_sigma_frac: 0.0,
            global_scale_range: (1.0, 1.0),
            pitch_range_deg: (-15.0, 0.0),
            yaw_range_deg: (-20.0, 20.0),
            emit_depth: false,
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

impl BenchmarkOptions {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.n_scenes == 0 {
            return bad("n_scenes must be >= 1");
        }
        let (lo, hi) = self.width_range_m;
        if !(lo > 0.0 && lo <= hi) {
            return bad("width range must satisfy 0 < min <= max");
        }
        let (lo, hi) = self.global_scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad("global scale range must satisfy 0 < min <= max");
        }
        if self.pitch_range_deg.0 > self.pitch_range_deg.1
            || self.yaw_range_deg.0 > self.yaw_range_deg.1
        {
            return bad("angle ranges must satisfy min <= max");
        }
        Ok(())
    }

    /// Scene parameters for every benchmark image, in order.
    pub fn scene_specs(&self) -> Vec<(String, SceneSpec)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.n_scenes)
            .map(|i| {
                let spec = SceneSpec {
                    sidewalk_width_m: draw(&mut rng, self.width_range_m),
                    camera_height_m: self.camera_height_m,
                    camera_pitch_deg: draw(&mut rng, self.pitch_range_deg),
                    camera_yaw_deg: draw(&mut rng, self.yaw_range_deg),
                    road_width_m: self.road_width_m,
                    global_scale: draw(&mut rng, self.global_scale_range),
                    noise_sigma_frac: self.noise_sigma_frac,
                    occlusion_boxes: Vec::new(),
                    seed: rng.gen(),
                };
                (format!("scene_{i:04}"), spec)
            })
            .collect()
    }

    pub fn camera(&self) -> Result<CameraModel, SynthError> {
        intrinsics_from_fov(self.fov_deg, self.image_width, self.image_height)
            .map_err(|e| SynthError::InvalidSpec(e.to_string()))
    }
}

/// In-memory benchmark scenes, ids `scene_0000`, `scene_0001`, …
pub fn generate_scenes(options: &BenchmarkOptions) -> Result<Vec<Scene>, SynthError> {
    options.validate()?;
    let cam = options.camera()?;
    options
        .scene_specs()
        .into_par_iter()
        .map(|(id, spec)| {
            let mut scene = generate_scene(&spec, &cam)?;
            scene.truth.image_id = id;
            Ok(scene)
        })
        .collect()
}

type WrittenScene = (ImageManifestEntry, Option<ImageManifestEntry>, GroundTruth);

fn write_scene(
    options: &BenchmarkOptions,
    cam: &CameraModel,
    out_dir: &Path,
    id: String,
    spec: &SceneSpec,
) -> Result<WrittenScene, SynthError> {
    let mut scene = generate_scene(spec, cam)?;
    scene.truth.image_id = id.clone();

    let points_name = format!("{id}.npy");
    let mask_name = format!("{id}_mask.png");
    save_point_map(&out_dir.join(&points_name), &scene.points)?;
    save_mask(&out_dir.join(&mask_name), &scene.mask)?;

    let mut entry = ImageManifestEntry::new(id.clone(), points_name.into(), mask_name.into());
    entry.camera_height_m = Some(options.camera_height_m);
    entry.fov_deg = Some(options.fov_deg);
    entry.reference_width_m = Some(spec.sidewalk_width_m);
    let depth_entry = if options.emit_depth {
        let depth_name = format!("{id}_depth.npy");
        save_depth_map(&out_dir.join(&depth_name), &scene.depth)?;
        let mut d = entry.clone();
        d.point_map_path = depth_name.into();
        Some(d)
    } else {
        None
    };
    Ok((entry, depth_entry, scene.truth))
}

/// What [`generate_benchmark`] wrote.
#[derive(Debug, Clone)]
pub struct BenchmarkFiles {
    pub manifest_path: PathBuf,
    pub depth_manifest_path: Option<PathBuf>,
    pub truth_path: PathBuf,
    pub entries: Vec<ImageManifestEntry>,
}

/// Writes point maps, masks, `manifest.json` and `truth.json` into `out_dir`
/// (plus depth tensors and `manifest_depth.json` when requested). Manifest
/// paths are relative to `out_dir`.
pub fn generate_benchmark(
    options: &BenchmarkOptions,
    out_dir: &Path,
) -> Result<BenchmarkFiles, SynthError> {
    options.validate()?;
    fs::create_dir_all(out_dir).map_err(|source| SynthError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let cam = options.camera()?;
    let written = options
        .scene_specs()
        .into_par_iter()
        .map(|(id, spec)| write_scene(options, &cam, out_dir, id, &spec))
        .collect::<Result<Vec<_>, _>>()?;
    let mut entries = Vec::with_capacity(written.len());
    let mut depth_entries = Vec::new();
    let mut truths = Vec::with_capacity(written.len());
    for (entry, depth_entry, truth) in written {
        entries.push(entry);
        depth_entries.extend(depth_entry);
        truths.push(truth);
    }

    let manifest_path = out_dir.join("manifest.json");
    save_manifest(&manifest_path, &entries)?;
    let depth_manifest_path = if options.emit_depth {
        let p = out_dir.join("manifest_depth.json");
        save_manifest(&p, &depth_entries)?;
        Some(p)
    } else {
        None
    };
    let truth_path = out_dir.join("truth.json");
    let text = serde_json::to_string_pretty(&truths).expect("truth serializes") + "\n";
    fs::write(&truth_path, text).map_err(|source| SynthError::Io {
        path: truth_path.clone(),
        source,
    })?;
    Ok(BenchmarkFiles {
        manifest_path,
        depth_manifest_path,
        truth_path,
        entries,
    })
}

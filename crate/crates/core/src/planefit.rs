//! Robust ground-plane estimation.
//!
//! A coarse least-squares fit over all support points sets the scale of the
//! residuals; their median absolute deviation gives an adaptive inlier
//! threshold `τ = clip(2.5 · 1.4826 · MAD, 0.005, 0.05)` for RANSAC, and the
//! RANSAC consensus set is refitted by least squares for the final plane.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::stats::mad;

/// The plane `normal · x + offset = 0` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    /// Plane through `point` with the given (not necessarily unit) normal.
    pub fn through(point: &Vector3<f64>, normal: Vector3<f64>) -> Self {
        let normal = normal.normalize();
        Self {
            normal,
            offset: -normal.dot(point),
        }
    }

    pub fn signed_distance(&self, x: &Vector3<f64>) -> f64 {
        self.normal.dot(x) + self.offset
    }

    pub fn distance(&self, x: &Vector3<f64>) -> f64 {
        self.signed_distance(x).abs()
    }

    /// Orthogonal projection of `x` onto the plane.
    pub fn project(&self, x: &Vector3<f64>) -> Vector3<f64> {
        x - self.normal * self.signed_distance(x)
    }

    /// Flips the sign convention if needed so that `reference` lies on the
    /// non-negative side.
    pub fn oriented_towards(self, reference: &Vector3<f64>) -> Self {
        if self.signed_distance(reference) < 0.0 {
            Self {
                normal: -self.normal,
                offset: -self.offset,
            }
        } else {
            self
        }
    }

    /// Angle between the two normals in degrees, ignoring orientation.
    pub fn angle_to_deg(&self, other: &Plane) -> f64 {
        self.normal
            .dot(&other.normal)
            .abs()
            .min(1.0)
            .acos()
            .to_degrees()
    }
}

/// Final ground plane plus fit diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub plane: Plane,
    pub inlier_count: usize,
    pub inlier_ratio: f64,
    /// Inlier threshold τ in model units.
    pub threshold_used: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    pub seed: u64,
    pub mad_multiplier: f64,
    pub mad_consistency: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            seed: 0,
            mad_multiplier: 2.5,
            mad_consistency: 1.4826,
            clip_lo: 0.005,
            clip_hi: 0.05,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.iterations < 1 {
            return Err("ransac.iterations must be >= 1".into());
        }
        if !(self.clip_lo > 0.0 && self.clip_lo <= self.clip_hi) {
            return Err("ransac clip bounds must satisfy 0 < clip_lo <= clip_hi".into());
        }
        if !(self.mad_multiplier > 0.0 && self.mad_consistency > 0.0) {
            return Err("ransac MAD factors must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaneFitConfig {
    pub ransac: RansacConfig,
    /// Fewer support points than this is an error.
    pub min_support: usize,
    pub min_inlier_ratio: f64,
}

impl Default for PlaneFitConfig {
    fn default() -> Self {
        Self {
            ransac: RansacConfig::default(),
            min_support: 50,
            min_inlier_ratio: 0.3,
        }
    }
}

impl PlaneFitConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.ransac.validate()?;
        if self.min_support < 3 {
            return Err("plane.min_support must be >= 3".into());
        }
        if !(0.0..=1.0).contains(&self.min_inlier_ratio) {
            return Err("plane.min_inlier_ratio must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlaneFitError {
    #[error("too few support points: {found} < {required}")]
    TooFewPoints { found: usize, required: usize },
    #[error("degenerate point set")]
    Degenerate,
    #[error("no non-degenerate sample found within {draws} draws")]
    NoValidSample { draws: usize },
    #[error("inlier ratio {ratio:.3} below minimum {min:.3}")]
    InsufficientInliers {
        ratio: f64,
        min: f64,
        plane: GroundPlane,
    },
}

/// Least-squares plane through the centroid with the least-variance direction
/// as normal, oriented so that `reference` is on the non-negative side.
pub fn fit_plane_svd(
    points: &[Vector3<f64>],
    reference: &Vector3<f64>,
) -> Result<Plane, PlaneFitError> {
    if points.len() < 3 {
        return Err(PlaneFitError::TooFewPoints {
            found: points.len(),
            required: 3,
        });
    }
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let q = p - centroid;
        scatter += q * q.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (low, mid, high) = (
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    if !(high > 0.0) || mid <= 1e-12 * high || !low.is_finite() {
        return Err(PlaneFitError::Degenerate);
    }
    let normal: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
    Ok(Plane::through(&centroid, normal).oriented_towards(reference))
}

pub fn point_plane_distances(points: &[Vector3<f64>], plane: &Plane) -> Vec<f64> {
    points.iter().map(|p| plane.distance(p)).collect()
}

/// `clip(multiplier · consistency · MAD, clip_lo, clip_hi)`.
pub fn adaptive_threshold(mad_value: f64, config: &RansacConfig) -> f64 {
    (config.mad_multiplier * config.mad_consistency * mad_value)
        .clamp(config.clip_lo, config.clip_hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub plane: Plane,
    /// Indices into the input, ascending.
    pub inliers: Vec<usize>,
}

fn plane_from_triplet(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<Plane> {
    let ab = b - a;
    let ac = c - a;
    let n = ab.cross(&ac);
    let norm = n.norm();
    if !(norm > 1e-12 * ab.norm() * ac.norm()) {
        return None;
    }
    Some(Plane {
        normal: n / norm,
        offset: -(n / norm).dot(a),
    })
}

/// Fixed-order tree sum of the lane accumulators.
fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// Structure-of-arrays copy of the points for fast hypothesis scoring.
struct Coordinates {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
}

impl Coordinates {
    const LANES: usize = 4;
    /// Points per cache tile; a multiple of `LANES`.
    const TILE: usize = 1024;

    fn new(points: &[Vector3<f64>]) -> Self {
        Self {
            x: points.iter().map(|p| p.x).collect(),
            y: points.iter().map(|p| p.y).collect(),
            z: points.iter().map(|p| p.z).collect(),
        }
    }

    /// Inlier count and sum of squared inlier distances for every plane.
    ///
    /// All planes are scored against one cache-sized tile of points before
    /// moving on. Each plane accumulates point `i` in lane `i % LANES`, so
    /// the result does not depend on the tiling and the inner loop
    /// vectorises.
    fn score_all(&self, planes: &[Plane], tau: f64) -> Vec<(usize, f64)> {
        let mut count = vec![[0u64; Self::LANES]; planes.len()];
        let mut sum = vec![[0.0f64; Self::LANES]; planes.len()];
        let n = self.x.len();
        let mut start = 0;
        while start < n {
            let end = (start + Self::TILE).min(n);
            let body = end - (end - start) % Self::LANES;
            let (xs, ys, zs) = (
                &self.x[start..body],
                &self.y[start..body],
                &self.z[start..body],
            );
            for (k, plane) in planes.iter().enumerate() {
                let (a, b, c, d) = (plane.normal.x, plane.normal.y, plane.normal.z, plane.offset);
                let (mut cnt, mut acc) = (count[k], sum[k]);
                for ((x, y), z) in xs
                    .chunks_exact(Self::LANES)
                    .zip(ys.chunks_exact(Self::LANES))
                    .zip(zs.chunks_exact(Self::LANES))
                {
                    for l in 0..Self::LANES {
                        let dist = (a * x[l] + b * y[l] + c * z[l] + d).abs();
                        let hit = dist <= tau;
                        cnt[l] += hit as u64;
                        acc[l] += if hit { dist * dist } else { 0.0 };
                    }
                }
                for i in body..end {
                    let dist = (a * self.x[i] + b * self.y[i] + c * self.z[i] + d).abs();
                    if dist <= tau {
                        cnt[i % Self::LANES] += 1;
                        acc[i % Self::LANES] += dist * dist;
                    }
                }
                count[k] = cnt;
                sum[k] = acc;
            }
            start = end;
        }
        count
            .iter()
            .zip(&sum)
            .map(|(c, s)| (c.iter().sum::<u64>() as usize, pairwise_sum(s)))
            .collect()
    }
}

/// Seeded RANSAC over minimal 3-point samples.
///
/// Keeps the hypothesis with the most points within `tau`; ties go to the
/// lower mean squared inlier distance, then to the earlier trial. Degenerate
/// samples do not count as trials, but at most `10 · iterations` samples are
/// drawn in total.
pub fn ransac_plane(
    points: &[Vector3<f64>],
    tau: f64,
    config: &RansacConfig,
) -> Result<RansacResult, PlaneFitError> {
    if points.len() < 3 {
        return Err(PlaneFitError::TooFewPoints {
            found: points.len(),
            required: 3,
        });
    }
    // Samples do not depend on scores, so every hypothesis is drawn first
    // and all of them are scored in one pass over the points.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let max_draws = config.iterations.saturating_mul(10);
    let mut candidates = Vec::with_capacity(config.iterations);
    let mut draws = 0;
    while candidates.len() < config.iterations && draws < max_draws {
        draws += 1;
        let sample = index::sample(&mut rng, points.len(), 3);
        if let Some(candidate) = plane_from_triplet(
            &points[sample.index(0)],
            &points[sample.index(1)],
            &points[sample.index(2)],
        ) {
            candidates.push(candidate);
        }
    }
    let scores = Coordinates::new(points).score_all(&candidates, tau);

    let mut best: Option<(usize, f64, Plane)> = None;
    for (&candidate, &(count, sum_sq)) in candidates.iter().zip(&scores) {
        let better = match &best {
            None => true,
            Some((best_count, best_sum_sq, _)) => {
                count > *best_count
                    || (count == *best_count
                        && count > 0
                        && sum_sq / (count as f64) < best_sum_sq / (*best_count as f64))
            }
        };
        if better {
            best = Some((count, sum_sq, candidate));
        }
    }

    let (_, _, plane) = best.ok_or(PlaneFitError::NoValidSample { draws })?;
    let inliers = points
        .iter()
        .enumerate()
        .filter(|(_, p)| plane.distance(p) <= tau)
        .map(|(i, _)| i)
        .collect();
    Ok(RansacResult { plane, inliers })
}

/// A ground plane together with the indices of its RANSAC consensus set.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFit {
    pub ground: GroundPlane,
    pub inliers: Vec<usize>,
}

/// Coarse fit, MAD-adaptive threshold, RANSAC, then least-squares refit on
/// the consensus set.
pub fn fit_ground_plane(
    points: &[Vector3<f64>],
    config: &PlaneFitConfig,
    reference: &Vector3<f64>,
) -> Result<GroundPlane, PlaneFitError> {
    fit_ground_plane_with_inliers(points, config, reference).map(|fit| fit.ground)
}

pub fn fit_ground_plane_with_inliers(
    points: &[Vector3<f64>],
    config: &PlaneFitConfig,
    reference: &Vector3<f64>,
) -> Result<PlaneFit, PlaneFitError> {
    if points.len() < config.min_support {
        return Err(PlaneFitError::TooFewPoints {
            found: points.len(),
            required: config.min_support,
        });
    }
    let coarse = fit_plane_svd(points, reference)?;
    let residuals = point_plane_distances(points, &coarse);
    // Non-empty: min_support >= 3 points were checked above.
    let spread = mad(&residuals).map_err(|_| PlaneFitError::Degenerate)?;
    let tau = adaptive_threshold(spread, &config.ransac);

    let consensus = ransac_plane(points, tau, &config.ransac)?;
    let support: Vec<Vector3<f64>> = consensus.inliers.iter().map(|&i| points[i]).collect();
    let plane = fit_plane_svd(&support, reference)?;

    let ground = GroundPlane {
        plane,
        inlier_count: consensus.inliers.len(),
        inlier_ratio: consensus.inliers.len() as f64 / points.len() as f64,
        threshold_used: tau,
    };
    if ground.inlier_ratio < config.min_inlier_ratio {
        return Err(PlaneFitError::InsufficientInliers {
            ratio: ground.inlier_ratio,
            min: config.min_inlier_ratio,
            plane: ground,
        });
    }
    Ok(PlaneFit {
        ground,
        inliers: consensus.inliers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;
    use rand::Rng;

    fn grid_on_y(y: f64, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .flat_map(|i| {
                (0..n).map(move |j| Vector3::new(i as f64 * 0.37 - 2.0, y, j as f64 * 0.29 + 1.0))
            })
            .collect()
    }

    #[test]
    fn svd_exact_plane() {
        let pts = grid_on_y(1.0, 6);
        let plane = fit_plane_svd(&pts, &Vector3::new(0.0, 2.5, 0.0)).unwrap();
        assert!((plane.normal - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        assert!((plane.offset + 1.0).abs() < 1e-12);
    }

    #[test]
    fn svd_rotation_equivariant() {
        let pts = grid_on_y(1.0, 6);
        let rot =
            Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(0.3, -1.0, 0.7)), 0.9);
        let rotated: Vec<_> = pts.iter().map(|p| rot * p).collect();
        let c = rot * Vector3::new(0.0, 2.5, 0.0);
        let plane = fit_plane_svd(&rotated, &c).unwrap();
        assert!((plane.normal - rot * Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn svd_degenerate_inputs() {
        let collinear = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(2.0, 2.0, 2.0),
        ];
        let err = fit_plane_svd(&collinear, &Vector3::zeros()).unwrap_err();
        assert_eq!(err, PlaneFitError::Degenerate);
        assert_eq!(err.to_string(), "degenerate point set");
        assert_eq!(
            fit_plane_svd(&[Vector3::zeros(); 5], &Vector3::zeros()),
            Err(PlaneFitError::Degenerate)
        );
        assert!(matches!(
            fit_plane_svd(&collinear[..2], &Vector3::zeros()),
            Err(PlaneFitError::TooFewPoints { found: 2, .. })
        ));
    }

    #[test]
    fn distances_hand_computed() {
        let p = Plane {
            normal: Vector3::new(0.0, 1.0, 0.0),
            offset: -1.0,
        };
        assert_eq!(
            point_plane_distances(&[Vector3::new(0.0, 2.0, 0.0)], &p),
            vec![1.0]
        );
        assert_eq!(p.distance(&Vector3::new(5.0, 1.0, -3.0)), 0.0);
        let q = Plane {
            normal: Vector3::new(0.6, 0.8, 0.0),
            offset: 0.0,
        };
        assert!((q.distance(&Vector3::new(3.0, 4.0, 0.0)) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_examples() {
        let cfg = RansacConfig::default();
        assert_eq!(adaptive_threshold(0.0, &cfg), 0.005);
        assert_eq!(adaptive_threshold(1.0, &cfg), 0.05);
        assert!((adaptive_threshold(0.004, &cfg) - 0.014826).abs() < 1e-15);
    }

    /// 100 points on y = 1 and 40 uniform outliers in the unit box above it.
    fn plane_with_box_outliers(seed: u64) -> (Vec<Vector3<f64>>, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts: Vec<_> = (0..100)
            .map(|_| Vector3::new(rng.gen_range(-1.0..1.0), 1.0, rng.gen_range(-1.0..1.0)))
            .collect();
        pts.extend((0..40).map(|_| {
            Vector3::new(
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            )
        }));
        (pts, 100)
    }

    #[test]
    fn ransac_finds_plane_among_outliers() {
        let (pts, n_plane) = plane_with_box_outliers(11);
        let tau = 0.01;
        // Oracle: membership by direct distance to y = 1.
        let accidental = pts[n_plane..]
            .iter()
            .filter(|p| (p.y - 1.0).abs() <= tau)
            .count();
        let cfg = RansacConfig {
            seed: 3,
            ..Default::default()
        };
        let result = ransac_plane(&pts, tau, &cfg).unwrap();
        assert!((0..n_plane).all(|i| result.inliers.contains(&i)));
        let extra = result.inliers.iter().filter(|&&i| i >= n_plane).count();
        assert_eq!(extra, accidental);
        assert!(extra <= 2);
    }

    #[test]
    fn ransac_all_inliers_and_determinism() {
        let pts = grid_on_y(-0.5, 8);
        let cfg = RansacConfig {
            seed: 99,
            iterations: 50,
            ..Default::default()
        };
        let a = ransac_plane(&pts, 0.01, &cfg).unwrap();
        assert_eq!(a.inliers, (0..pts.len()).collect::<Vec<_>>());
        let (pts, _) = plane_with_box_outliers(5);
        let a = ransac_plane(&pts, 0.02, &cfg).unwrap();
        let b = ransac_plane(&pts, 0.02, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ransac_gives_up_on_degenerate_sets() {
        let line: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let cfg = RansacConfig {
            iterations: 7,
            ..Default::default()
        };
        assert_eq!(
            ransac_plane(&line, 0.01, &cfg),
            Err(PlaneFitError::NoValidSample { draws: 70 })
        );
    }

    #[test]
    fn ground_plane_needs_support() {
        let pts = grid_on_y(0.0, 3);
        let err = fit_ground_plane(
            &pts[..9],
            &PlaneFitConfig::default(),
            &Vector3::new(0.0, 1.0, 0.0),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            PlaneFitError::TooFewPoints {
                found: 9,
                required: 50
            }
        ));
        assert!(err.to_string().contains("too few support points"));
    }

    #[test]
    fn ground_plane_rejects_low_inlier_ratio() {
        let (pts, _) = plane_with_box_outliers(1);
        let cfg = PlaneFitConfig {
            min_inlier_ratio: 0.9,
            ..Default::default()
        };
        assert!(matches!(
            fit_ground_plane(&pts, &cfg, &Vector3::new(0.0, 3.0, 0.0)),
            Err(PlaneFitError::InsufficientInliers { .. })
        ));
    }

    fn noisy_ground(seed: u64, noise: f64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..400)
            .map(|_| {
                let x = rng.gen_range(-3.0..3.0);
                let z = rng.gen_range(2.0..10.0);
                Vector3::new(
                    x,
                    1.5 + 0.1 * x - 0.05 * z + noise * rng.gen_range(-1.0..1.0),
                    z,
                )
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn ground_plane_rigid_motion_equivariance(
            seed in 0u64..1000,
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in -3.0f64..3.0,
            shift in prop::array::uniform3(-5.0f64..5.0),
        ) {
            prop_assume!(Vector3::from(axis).norm() > 0.1);
            let pts = noisy_ground(seed, 0.0);
            let cfg = PlaneFitConfig::default();
            let c = Vector3::zeros();
            let base = fit_ground_plane(&pts, &cfg, &c).unwrap();

            let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle);
            let t = Vector3::from(shift);
            let moved: Vec<_> = pts.iter().map(|p| rot * p + t).collect();
            let fit = fit_ground_plane(&moved, &cfg, &(rot * c + t)).unwrap();

            let n = rot * base.plane.normal;
            prop_assert!((fit.plane.normal - n).norm() < 1e-6);
            prop_assert!((fit.plane.offset - (base.plane.offset - n.dot(&t))).abs() < 1e-6);
        }

        #[test]
        fn inliers_stay_near_refit_plane(seed in 0u64..1000, noise in 0.0f64..0.05) {
            let mut pts = noisy_ground(seed, noise);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead);
            pts.extend((0..150).map(|_| Vector3::new(
                rng.gen_range(-3.0..3.0), rng.gen_range(-2.0..1.0), rng.gen_range(2.0..10.0))));
            let fit = fit_ground_plane_with_inliers(&pts, &PlaneFitConfig::default(), &Vector3::zeros()).unwrap();
            let tau = fit.ground.threshold_used;
            prop_assert!((0.005..=0.05).contains(&tau));
            for &i in &fit.inliers {
                prop_assert!(fit.ground.plane.distance(&pts[i]) <= 2.0 * tau);
            }
            prop_assert!((fit.ground.plane.normal.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn threshold_always_clipped(m in 0.0f64..100.0) {
            let tau = adaptive_threshold(m, &RansacConfig::default());
            prop_assert!((0.005..=0.05).contains(&tau));
        }
    }

    #[test]
    fn ground_plane_bit_deterministic() {
        let pts = noisy_ground(8, 0.02);
        let cfg = PlaneFitConfig::default();
        let a = fit_ground_plane(&pts, &cfg, &Vector3::zeros()).unwrap();
        let b = fit_ground_plane(&pts, &cfg, &Vector3::zeros()).unwrap();
        assert_eq!(a.plane.normal.as_slice(), b.plane.normal.as_slice());
        assert_eq!(a.plane.offset.to_bits(), b.plane.offset.to_bits());
    }
}

//! Street-network sampling and segment-level aggregation.
//!
//! Positions are handled in a local equirectangular frame (metres east and
//! north of a reference point), which is accurate to well under a metre at
//! neighbourhood scale.

mod geojson;
mod provider;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::MeasurementRecord;
use crate::stats::median;

pub use geojson::{parse_network, read_network, segment_records_geojson, GeoJsonError};
pub use provider::{
    fetch_all, sample_requests, HttpProvider, ImageRequest, ImageSource, ImageryProvider,
    LocalDirectory, ProviderError,
};

/// Mean Earth radius, metres.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub sample_interval_m: f64,
    pub dedup_cell_m: f64,
    /// Half-length of the chord used to estimate the local street bearing.
    pub chord_half_window_m: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            sample_interval_m: 30.0,
            dedup_cell_m: 20.0,
            chord_half_window_m: 15.0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("network.sample_interval_m", self.sample_interval_m),
            ("network.dedup_cell_m", self.dedup_cell_m),
            ("network.chord_half_window_m", self.chord_half_window_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be > 0, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("segment {0}: needs at least two vertices")]
    TooFewVertices(String),
    #[error("segment {0}: degenerate zero-length segment")]
    ZeroLength(String),
    #[error("segment {id}: coordinate ({lon}, {lat}) out of range")]
    InvalidCoordinate { id: String, lon: f64, lat: f64 },
    #[error("sample interval must be > 0, got {0}")]
    InvalidInterval(f64),
    #[error("grid cell must be > 0, got {0}")]
    InvalidCell(f64),
    #[error("record references segment {0} which is not in the network")]
    UnknownSegment(String),
}

/// Equirectangular projection around a reference position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    lon0: f64,
    lat0: f64,
    metres_per_deg_lat: f64,
    metres_per_deg_lon: f64,
}

impl LocalFrame {
    pub fn new(lon0: f64, lat0: f64) -> Self {
        let metres_per_deg_lat = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        Self {
            lon0,
            lat0,
            metres_per_deg_lat,
            metres_per_deg_lon: metres_per_deg_lat * lat0.to_radians().cos(),
        }
    }

    /// `(east, north)` metres.
    pub fn to_local(&self, (lon, lat): (f64, f64)) -> (f64, f64) {
        (
            (lon - self.lon0) * self.metres_per_deg_lon,
            (lat - self.lat0) * self.metres_per_deg_lat,
        )
    }

    pub fn to_geographic(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (
            self.lon0 + x / self.metres_per_deg_lon,
            self.lat0 + y / self.metres_per_deg_lat,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreetSegment {
    pub segment_id: String,
    /// `(lon, lat)` degrees.
    pub polyline: Vec<(f64, f64)>,
    pub length_m: f64,
}

impl StreetSegment {
    pub fn new(
        segment_id: impl Into<String>,
        polyline: Vec<(f64, f64)>,
    ) -> Result<Self, NetworkError> {
        let segment_id = segment_id.into();
        if polyline.len() < 2 {
            return Err(NetworkError::TooFewVertices(segment_id));
        }
        if let Some(&(lon, lat)) = polyline
            .iter()
            .find(|(lon, lat)| !(lon.abs() <= 180.0 && lat.abs() < 90.0))
        {
            return Err(NetworkError::InvalidCoordinate {
                id: segment_id,
                lon,
                lat,
            });
        }
        let mut seg = Self {
            segment_id,
            polyline,
            length_m: 0.0,
        };
        let local = seg.local_vertices();
        seg.length_m = local.windows(2).map(|w| dist(w[0], w[1])).sum();
        if !(seg.length_m > 0.0) {
            return Err(NetworkError::ZeroLength(seg.segment_id));
        }
        Ok(seg)
    }

    /// Frame centred on the vertex centroid.
    pub fn frame(&self) -> LocalFrame {
        let n = self.polyline.len() as f64;
        let (slon, slat) = self
            .polyline
            .iter()
            .fold((0.0, 0.0), |(a, b), (lon, lat)| (a + lon, b + lat));
        LocalFrame::new(slon / n, slat / n)
    }

    fn local_vertices(&self) -> Vec<(f64, f64)> {
        let frame = self.frame();
        self.polyline.iter().map(|&p| frame.to_local(p)).collect()
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (b.0 - a.0).hypot(b.1 - a.1)
}

/// Polyline in local metres with cumulative chainage per vertex.
struct Chainage {
    vertices: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
}

impl Chainage {
    fn new(vertices: Vec<(f64, f64)>) -> Self {
        let mut cumulative = Vec::with_capacity(vertices.len());
        let mut total = 0.0;
        cumulative.push(0.0);
        for w in vertices.windows(2) {
            total += dist(w[0], w[1]);
            cumulative.push(total);
        }
        Self {
            vertices,
            cumulative,
        }
    }

    fn length(&self) -> f64 {
        *self.cumulative.last().expect("non-empty")
    }

    fn point_at(&self, s: f64) -> (f64, f64) {
        let s = s.clamp(0.0, self.length());
        let i = self
            .cumulative
            .partition_point(|&c| c <= s)
            .clamp(1, self.vertices.len() - 1);
        let (c0, c1) = (self.cumulative[i - 1], self.cumulative[i]);
        let t = if c1 > c0 { (s - c0) / (c1 - c0) } else { 0.0 };
        let (a, b) = (self.vertices[i - 1], self.vertices[i]);
        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub segment_id: String,
    /// `(lon, lat)` degrees.
    pub position: (f64, f64),
    pub chainage_m: f64,
    /// Clockwise from north, in `[0, 360)`.
    pub bearing_deg: f64,
    /// Perpendicular camera headings, `bearing + 90` and `bearing + 270`.
    pub headings_deg: (f64, f64),
}

fn wrap_degrees(a: f64) -> f64 {
    let w = a.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Points every `interval_m` from the start of the segment (the far
/// endpoint itself is never sampled).
pub fn sample_segment(
    segment: &StreetSegment,
    interval_m: f64,
    chord_half_window_m: f64,
) -> Result<Vec<SamplePoint>, NetworkError> {
    if !(interval_m > 0.0 && interval_m.is_finite()) {
        return Err(NetworkError::InvalidInterval(interval_m));
    }
    let frame = segment.frame();
    let line = Chainage::new(segment.local_vertices());
    let length = line.length();
    if !(length > 0.0) {
        return Err(NetworkError::ZeroLength(segment.segment_id.clone()));
    }
    let mut points = Vec::new();
    for k in 0u64.. {
        let s = k as f64 * interval_m;
        if s >= length {
            break;
        }
        let a = line.point_at(s - chord_half_window_m);
        let b = line.point_at(s + chord_half_window_m);
        let bearing = wrap_degrees((b.0 - a.0).atan2(b.1 - a.1).to_degrees());
        points.push(SamplePoint {
            segment_id: segment.segment_id.clone(),
            position: frame.to_geographic(line.point_at(s)),
            chainage_m: s,
            bearing_deg: bearing,
            headings_deg: (wrap_degrees(bearing + 90.0), wrap_degrees(bearing + 270.0)),
        });
    }
    Ok(points)
}

/// Samples every segment with the configured interval.
pub fn sample_network(
    network: &[StreetSegment],
    config: &NetworkConfig,
) -> Result<Vec<SamplePoint>, NetworkError> {
    let mut all = Vec::new();
    for seg in network {
        all.extend(sample_segment(
            seg,
            config.sample_interval_m,
            config.chord_half_window_m,
        )?);
    }
    Ok(all)
}

/// Keeps one point per `cell_m` grid cell: the first by `(segment_id,
/// chainage)`. The grid is anchored at the south-west corner of the point
/// set, so the result does not depend on input order. Output is in sorted
/// order.
pub fn dedup_grid(points: &[SamplePoint], cell_m: f64) -> Result<Vec<SamplePoint>, NetworkError> {
    if !(cell_m > 0.0 && cell_m.is_finite()) {
        return Err(NetworkError::InvalidCell(cell_m));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        a.segment_id
            .cmp(&b.segment_id)
            .then(a.chainage_m.total_cmp(&b.chainage_m))
            .then(a.position.0.total_cmp(&b.position.0))
            .then(a.position.1.total_cmp(&b.position.1))
    });
    let min_lon = sorted
        .iter()
        .map(|p| p.position.0)
        .fold(f64::INFINITY, f64::min);
    let min_lat = sorted
        .iter()
        .map(|p| p.position.1)
        .fold(f64::INFINITY, f64::min);
    let frame = LocalFrame::new(min_lon, min_lat);
    let mut seen = std::collections::HashSet::new();
    sorted.retain(|p| {
        let (x, y) = frame.to_local(p.position);
        seen.insert(((x / cell_m).floor() as i64, (y / cell_m).floor() as i64))
    });
    Ok(sorted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment_id: String,
    pub n_measurements: usize,
    pub median_width_m: f64,
    pub widths_m: Vec<f64>,
}

/// Median accepted width per segment, sorted by segment id. Records that
/// are not accepted or carry no segment id are skipped.
pub fn aggregate_segments(records: &[MeasurementRecord]) -> Vec<SegmentRecord> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_accepted()) {
        if let (Some(id), Some(w)) = (&r.segment_id, r.width_m) {
            groups.entry(id).or_default().push(w);
        }
    }
    groups
        .into_iter()
        .map(|(id, widths_m)| SegmentRecord {
            segment_id: id.to_string(),
            n_measurements: widths_m.len(),
            median_width_m: median(&widths_m).expect("groups are non-empty"),
            widths_m,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub covered: usize,
    pub total: usize,
    /// Percentage to one decimal, halves rounded up.
    pub coverage_pct: f64,
    pub median_of_medians_m: Option<f64>,
}

impl fmt::Display for CoverageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{} segments covered ({:.1}%)",
            self.covered, self.total, self.coverage_pct
        )?;
        match self.median_of_medians_m {
            Some(m) => write!(f, ", median width {m:.2} m"),
            None => write!(f, ", median width n/a"),
        }
    }
}

/// `100·covered/total` to one decimal, halves rounded up, in exact integer
/// arithmetic.
pub fn percentage_one_decimal(part: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let (p, t) = (part as u128, total as u128);
    let tenths = (2000 * p + t) / (2 * t);
    tenths as f64 / 10.0
}

pub fn coverage_report(
    records: &[SegmentRecord],
    network: &[StreetSegment],
) -> Result<CoverageReport, NetworkError> {
    let known: std::collections::HashSet<&str> =
        network.iter().map(|s| s.segment_id.as_str()).collect();
    let mut medians: BTreeMap<&str, f64> = BTreeMap::new();
    for r in records {
        if !known.contains(r.segment_id.as_str()) {
            return Err(NetworkError::UnknownSegment(r.segment_id.clone()));
        }
        medians.insert(&r.segment_id, r.median_width_m);
    }
    let values: Vec<f64> = medians.values().copied().collect();
    Ok(CoverageReport {
        covered: medians.len(),
        total: known.len(),
        coverage_pct: percentage_one_decimal(medians.len(), known.len()),
        median_of_medians_m: median(&values).ok(),
    })
}

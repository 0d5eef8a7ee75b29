//! Network input and segment output as GeoJSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use thiserror::Error;

use super::{NetworkError, SegmentRecord, StreetSegment};

#[derive(Debug, Error)]
pub enum GeoJsonError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("feature {index}: {message}")]
    Feature { index: usize, message: String },
    #[error("{0}")]
    Structure(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

pub fn read_network(path: &Path) -> Result<Vec<StreetSegment>, GeoJsonError> {
    let text = fs::read_to_string(path).map_err(|source| GeoJsonError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_network(&text)
}

/// FeatureCollection of LineString features, each with a `segment_id`
/// property (string or number).
pub fn parse_network(text: &str) -> Result<Vec<StreetSegment>, GeoJsonError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| GeoJsonError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(GeoJsonError::Structure(
            "expected a FeatureCollection".into(),
        ));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| {
            GeoJsonError::Structure("FeatureCollection without a features array".into())
        })?;

    let mut ids = std::collections::HashSet::new();
    let mut segments = Vec::with_capacity(features.len());
    for (index, feature) in features.iter().enumerate() {
        let fail = |message: String| GeoJsonError::Feature { index, message };
        let id = match feature.pointer("/properties/segment_id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(fail("missing segment_id property".into())),
        };
        let geometry = feature
            .get("geometry")
            .ok_or_else(|| fail("missing geometry".into()))?;
        if geometry.get("type").and_then(Value::as_str) != Some("LineString") {
            return Err(fail("geometry must be a LineString".into()));
        }
        let coords = geometry
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| fail("LineString without coordinates".into()))?;
        let polyline = coords
            .iter()
            .map(|c| match c.as_array().map(|a| a.as_slice()) {
                Some([lon, lat, ..]) => lon.as_f64().zip(lat.as_f64()),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| fail("coordinates must be [lon, lat] pairs".into()))?;
        if !ids.insert(id.clone()) {
            return Err(fail(format!("duplicate segment_id {id}")));
        }
        segments.push(StreetSegment::new(id, polyline)?);
    }
    Ok(segments)
}

/// Aggregated records as LineString features; records whose segment is not
/// in `network` are skipped.
pub fn segment_records_geojson(records: &[SegmentRecord], network: &[StreetSegment]) -> Value {
    let features: Vec<Value> = records
        .iter()
        .filter_map(|r| {
            let seg = network.iter().find(|s| s.segment_id == r.segment_id)?;
            let coords: Vec<Value> = seg
                .polyline
                .iter()
                .map(|&(lon, lat)| json!([lon, lat]))
                .collect();
            let mut props = Map::new();
            props.insert("segment_id".into(), json!(r.segment_id));
            props.insert("n_measurements".into(), json!(r.n_measurements));
            props.insert("median_width_m".into(), json!(r.median_width_m));
            Some(json!({
                "type": "Feature",
                "geometry": { "type": "LineString", "coordinates": coords },
                "properties": props,
            }))
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

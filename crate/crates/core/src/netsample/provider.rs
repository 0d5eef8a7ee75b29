//! Imagery acquisition boundary.
//!
//! Downloading is left to the operator: the HTTP provider only renders the
//! request URL, and the local provider looks files up in a directory laid
//! out by request id.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SamplePoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRequest {
    /// `<segment>_<chainage>_<heading>`, unique within a plan.
    pub request_id: String,
    pub segment_id: String,
    pub lon: f64,
    pub lat: f64,
    pub heading_deg: f64,
    pub pitch_deg: f64,
    pub size_px: u32,
    pub fov_deg: f64,
}

/// Two requests per sample point, one per perpendicular heading.
pub fn sample_requests(points: &[SamplePoint]) -> Vec<ImageRequest> {
    points
        .iter()
        .flat_map(|p| {
            [p.headings_deg.0, p.headings_deg.1].map(|heading| ImageRequest {
                request_id: format!("{}_{:.0}_{:03.0}", p.segment_id, p.chainage_m, heading),
                segment_id: p.segment_id.clone(),
                lon: p.position.0,
                lat: p.position.1,
                heading_deg: heading,
                pitch_deg: 0.0,
                size_px: 640,
                fov_deg: 90.0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageSource {
    File(PathBuf),
    Url(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("no imagery for {0}")]
    NotFound(String),
}

pub trait ImageryProvider: Sync {
    fn locate(&self, request: &ImageRequest) -> Result<ImageSource, ProviderError>;
}

/// `<root>/<request_id>.<extension>`.
#[derive(Debug, Clone)]
pub struct LocalDirectory {
    pub root: PathBuf,
    pub extension: String,
}

impl LocalDirectory {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            extension: "jpg".into(),
        }
    }
}

impl ImageryProvider for LocalDirectory {
    fn locate(&self, request: &ImageRequest) -> Result<ImageSource, ProviderError> {
        let path = self
            .root
            .join(format!("{}.{}", request.request_id, self.extension));
        if path.is_file() {
            Ok(ImageSource::File(path))
        } else {
            Err(ProviderError::NotFound(request.request_id.clone()))
        }
    }
}

/// Renders street-level imagery request URLs against `endpoint`.
/// Credentials, if the service needs them, are appended by the operator.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    pub endpoint: String,
}

impl ImageryProvider for HttpProvider {
    fn locate(&self, r: &ImageRequest) -> Result<ImageSource, ProviderError> {
        Ok(ImageSource::Url(format!(
            "{}?size={}x{}&location={:.7},{:.7}&heading={:.1}&pitch={:.1}&fov={:.0}",
            self.endpoint,
            r.size_px,
            r.size_px,
            r.lat,
            r.lon,
            r.heading_deg,
            r.pitch_deg,
            r.fov_deg
        )))
    }
}

/// Resolves all requests with at most `workers` concurrent calls; results
/// follow request order.
pub fn fetch_all<P: ImageryProvider>(
    provider: &P,
    requests: &[ImageRequest],
    workers: usize,
) -> Vec<Result<ImageSource, ProviderError>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| requests.par_iter().map(|r| provider.locate(r)).collect())
}

//! Accuracy metrics, ablation variants, camera-height sweeps and the
//! backbone protocols.
//!
//! Only accepted measurements with a reference width are scored; rejected
//! and failed images are counted in `n_rejected` instead.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::ingest::ImageManifestEntry;
use crate::pipeline::{
    measure_manifest, CalibrationMode, GeometrySource, ImageOutcome, MeasurementRecord,
    PipelineError, RunOptions,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("non-finite value in metric input")]
    NonFinite,
    #[error("no ground truth: no record carries a reference width")]
    NoGroundTruth,
    #[error("no accepted measurements ({n_rejected} rejected)")]
    NothingAccepted { n_rejected: usize },
    #[error("{0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae_m: f64,
    pub rmse_m: f64,
    /// Mean of `pred − truth`.
    pub bias_m: f64,
    /// Fraction with `|pred − truth| < 0.25`.
    pub frac_025: f64,
    /// Fraction with `|pred − truth| < 0.50`.
    pub frac_050: f64,
    pub n_evaluated: usize,
    pub n_rejected: usize,
}

/// Metrics over `(pred, truth)` pairs in metres.
pub fn compute_metrics(pairs: &[(f64, f64)]) -> Result<MetricsReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    if pairs.iter().any(|(p, t)| !(p.is_finite() && t.is_finite())) {
        return Err(EvalError::NonFinite);
    }
    let n = pairs.len() as f64;
    let (mut abs, mut sq, mut signed, mut n025, mut n050) = (0.0, 0.0, 0.0, 0usize, 0usize);
    for &(p, t) in pairs {
        let d = p - t;
        abs += d.abs();
        sq += d * d;
        signed += d;
        n025 += (d.abs() < 0.25) as usize;
        n050 += (d.abs() < 0.50) as usize;
    }
    Ok(MetricsReport {
        mae_m: abs / n,
        rmse_m: (sq / n).sqrt(),
        bias_m: signed / n,
        frac_025: n025 as f64 / n,
        frac_050: n050 as f64 / n,
        n_evaluated: pairs.len(),
        n_rejected: 0,
    })
}

/// Scores records against their reference widths. Records without a
/// reference are ignored.
pub fn evaluate_records(records: &[MeasurementRecord]) -> Result<MetricsReport, EvalError> {
    let mut pairs = Vec::new();
    let mut n_rejected = 0;
    let mut any_truth = false;
    for r in records {
        let Some(truth) = r.reference_width_m else {
            continue;
        };
        any_truth = true;
        match (r.is_accepted(), r.width_m) {
            (true, Some(w)) => pairs.push((w, truth)),
            _ => n_rejected += 1,
        }
    }
    if !any_truth {
        return Err(EvalError::NoGroundTruth);
    }
    if pairs.is_empty() {
        return Err(EvalError::NothingAccepted { n_rejected });
    }
    let mut report = compute_metrics(&pairs)?;
    report.n_rejected = n_rejected;
    Ok(report)
}

pub fn evaluate_outcomes(outcomes: &[ImageOutcome]) -> Result<MetricsReport, EvalError> {
    let records: Vec<_> = outcomes.iter().map(ImageOutcome::record).collect();
    evaluate_records(&records)
}

/// Pipeline variants of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Scale fixed to one.
    NoScale,
    /// Flat ground at the prior height below a level pinhole camera, instead
    /// of reconstructed geometry.
    PinholeOnly,
    /// Every image column scanned instead of the central band.
    FullWidth,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoScale,
        Variant::PinholeOnly,
        Variant::FullWidth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoScale => "no_scale",
            Variant::PinholeOnly => "pinhole_only",
            Variant::FullWidth => "full_width",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "Full pipeline",
            Variant::NoScale => "- Scale calibration",
            Variant::PinholeOnly => "Pinhole only",
            Variant::FullWidth => "Full image width",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    /// Configuration and run options implementing the variant on top of
    /// `base`.
    pub fn apply(
        self,
        base: &PipelineConfig,
        options: &RunOptions,
    ) -> (PipelineConfig, RunOptions) {
        let mut config = base.clone();
        let mut options = *options;
        match self {
            Variant::Full => {}
            Variant::NoScale => options.calibration = CalibrationMode::Native,
            Variant::PinholeOnly => options.geometry = GeometrySource::PinholeFlat,
            Variant::FullWidth => config.measure.band_fraction = 1.0,
        }
        (config, options)
    }
}

pub fn run_variant(
    entries: &[ImageManifestEntry],
    config: &PipelineConfig,
    options: &RunOptions,
    variant: Variant,
    workers: usize,
) -> Vec<ImageOutcome> {
    let (config, options) = variant.apply(config, options);
    measure_manifest(entries, &config, &options, workers)
}

pub fn run_ablation(
    entries: &[ImageManifestEntry],
    config: &PipelineConfig,
    variant: Variant,
    workers: usize,
) -> Result<MetricsReport, EvalError> {
    evaluate_outcomes(&run_variant(
        entries,
        config,
        &RunOptions::default(),
        variant,
        workers,
    ))
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub h_cam: f64,
    pub report: MetricsReport,
    pub records: Vec<MeasurementRecord>,
}

/// Rescales already measured outcomes to each prior height. Geometry, plane
/// and per-column model widths are reused; only calibration and the
/// metric gates are re-run.
pub fn sweep_camera_height(
    outcomes: &[ImageOutcome],
    heights: &[f64],
    config: &PipelineConfig,
) -> Result<Vec<SweepPoint>, EvalError> {
    heights
        .iter()
        .map(|&h| {
            if !(h > 0.0 && h.is_finite()) {
                return Err(EvalError::Protocol(format!(
                    "camera height must be > 0, got {h}"
                )));
            }
            let records: Vec<MeasurementRecord> = outcomes
                .iter()
                .map(|o| {
                    match (
                        &o.result,
                        o.result.as_ref().ok().and_then(|m| m.calibration),
                    ) {
                        (Ok(m), Some(cal)) => {
                            let cal = cal.with_camera_height(h).expect("positive heights");
                            let outcome = ImageOutcome {
                                entry: o.entry.clone(),
                                result: Ok(m.recalibrated(&cal, &config.measure)),
                            };
                            outcome.record()
                        }
                        _ => o.record(),
                    }
                })
                .collect();
            let report = evaluate_records(&records)?;
            Ok(SweepPoint {
                h_cam: h,
                report,
                records,
            })
        })
        .collect()
}

/// Measures once, then sweeps.
pub fn sweep_manifest(
    entries: &[ImageManifestEntry],
    config: &PipelineConfig,
    heights: &[f64],
    workers: usize,
) -> Result<Vec<SweepPoint>, EvalError> {
    if heights.is_empty() {
        return Ok(Vec::new());
    }
    let outcomes = measure_manifest(entries, config, &RunOptions::default(), workers);
    sweep_camera_height(&outcomes, heights, config)
}

/// How a family of geometry backbones is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    category: u8,
    calibration: CalibrationMode,
    geometry_source: GeometrySource,
}

impl ProtocolSpec {
    /// Category 1: metric geometry used natively. Category 2: depth
    /// unprojected through the intrinsics, height-calibrated. Category 3:
    /// point maps, height-calibrated.
    pub fn new(
        category: u8,
        calibration: CalibrationMode,
        geometry_source: GeometrySource,
    ) -> Result<Self, EvalError> {
        let bad = |m: &str| Err(EvalError::Protocol(format!("category {category}: {m}")));
        match (category, calibration, geometry_source) {
            (_, _, GeometrySource::PinholeFlat) => bad("pinhole geometry is not a protocol source"),
            (1, CalibrationMode::Native, _) => Ok(()),
            (1, _, _) => bad("uses native calibration"),
            (2 | 3, CalibrationMode::Native, _) => bad("uses camera-height calibration"),
            (2, _, GeometrySource::DepthMap) => Ok(()),
            (2, _, _) => bad("reads depth maps"),
            (3, _, GeometrySource::PointMap) => Ok(()),
            (3, _, _) => bad("reads point maps"),
            _ => bad("unknown category (expected 1, 2 or 3)"),
        }?;
        Ok(Self {
            category,
            calibration,
            geometry_source,
        })
    }

    /// The canonical protocol of a category.
    pub fn category(category: u8) -> Result<Self, EvalError> {
        match category {
            1 => Self::new(1, CalibrationMode::Native, GeometrySource::PointMap),
            2 => Self::new(2, CalibrationMode::CameraHeight, GeometrySource::DepthMap),
            3 => Self::new(3, CalibrationMode::CameraHeight, GeometrySource::PointMap),
            _ => Self::new(
                category,
                CalibrationMode::CameraHeight,
                GeometrySource::PointMap,
            ),
        }
    }

    pub fn category_id(&self) -> u8 {
        self.category
    }

    pub fn calibration(&self) -> CalibrationMode {
        self.calibration
    }

    pub fn geometry_source(&self) -> GeometrySource {
        self.geometry_source
    }

    pub fn run_options(&self, h_cam_override: Option<f64>) -> RunOptions {
        RunOptions {
            geometry: self.geometry_source,
            calibration: self.calibration,
            h_cam_override,
        }
    }
}

pub fn run_protocol_outcomes(
    entries: &[ImageManifestEntry],
    config: &PipelineConfig,
    protocol: &ProtocolSpec,
    h_cam_override: Option<f64>,
    workers: usize,
) -> Result<Vec<ImageOutcome>, EvalError> {
    let outcomes = measure_manifest(
        entries,
        config,
        &protocol.run_options(h_cam_override),
        workers,
    );
    if let Some(e @ PipelineError::WrongGeometryKind { .. }) = outcomes.iter().find_map(|o| {
        o.result
            .as_ref()
            .err()
            .filter(|e| matches!(e, PipelineError::WrongGeometryKind { .. }))
    }) {
        return Err(EvalError::Protocol(e.to_string()));
    }
    Ok(outcomes)
}

pub fn run_protocol(
    entries: &[ImageManifestEntry],
    config: &PipelineConfig,
    protocol: &ProtocolSpec,
    workers: usize,
) -> Result<MetricsReport, EvalError> {
    evaluate_outcomes(&run_protocol_outcomes(
        entries, config, protocol, None, workers,
    )?)
}

/// One line of a report table or CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub n: usize,
    pub mae_m: f64,
    pub rmse_m: f64,
    pub bias_m: f64,
    pub frac_025: f64,
    pub frac_050: f64,
    pub n_rejected: usize,
}

impl ReportRow {
    pub fn new(variant: impl Into<String>, r: &MetricsReport) -> Self {
        Self {
            variant: variant.into(),
            n: r.n_evaluated,
            mae_m: r.mae_m,
            rmse_m: r.rmse_m,
            bias_m: r.bias_m,
            frac_025: r.frac_025,
            frac_050: r.frac_050,
            n_rejected: r.n_rejected,
        }
    }
}

pub fn format_table(rows: &[ReportRow]) -> String {
    let w = rows
        .iter()
        .map(|r| r.variant.len())
        .max()
        .unwrap_or(0)
        .max(7);
    let mut out = format!(
        "{:<w$}  {:>5}  {:>7}  {:>7}  {:>7}  {:>6}  {:>6}  {:>8}\n",
        "variant", "n", "MAE", "RMSE", "bias", "<0.25", "<0.50", "rejected"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<w$}  {:>5}  {:>7.3}  {:>7.3}  {:>+7.3}  {:>5.1}%  {:>5.1}%  {:>8}",
            r.variant,
            r.n,
            r.mae_m,
            r.rmse_m,
            r.bias_m,
            100.0 * r.frac_025,
            100.0 * r.frac_050,
            r.n_rejected
        );
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Bar chart of MAE per row, with an optional dashed red reference line
/// (typically the full pipeline's MAE).
pub fn mae_bar_chart_svg(rows: &[ReportRow], reference_mae: Option<f64>) -> String {
    const BAR: f64 = 48.0;
    const GAP: f64 = 24.0;
    const LEFT: f64 = 60.0;
    const TOP: f64 = 30.0;
    const PLOT_H: f64 = 240.0;
    let width = LEFT + GAP + rows.len() as f64 * (BAR + GAP) + 20.0;
    let height = TOP + PLOT_H + 110.0;
    let max = rows
        .iter()
        .map(|r| r.mae_m)
        .chain(reference_mae)
        .filter(|v| v.is_finite())
        .fold(0.0_f64, f64::max)
        .max(1e-9)
        * 1.15;
    let y = |v: f64| TOP + PLOT_H * (1.0 - v / max);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}" stroke="black"/>"#,
        TOP + PLOT_H
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" y1="{b:.1}" x2="{:.1}" y2="{b:.1}" stroke="black"/>"#,
        width - 10.0,
        b = TOP + PLOT_H
    );
    for i in 0..=4 {
        let v = max * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            LEFT - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">MAE (m)</text>"#,
        TOP + PLOT_H / 2.0,
        TOP + PLOT_H / 2.0
    );
    for (i, r) in rows.iter().enumerate() {
        let x = LEFT + GAP + i as f64 * (BAR + GAP);
        let top = y(r.mae_m);
        let _ = writeln!(
            svg,
            r##"<rect x="{x:.1}" y="{top:.1}" width="{BAR}" height="{:.1}" fill="#4c72b0"/>"##,
            TOP + PLOT_H - top
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#,
            x + BAR / 2.0,
            top - 4.0,
            r.mae_m
        );
        let (lx, ly) = (x + BAR / 2.0, TOP + PLOT_H + 14.0);
        let _ = writeln!(
            svg,
            r#"<text x="{lx:.1}" y="{ly:.1}" text-anchor="end" transform="rotate(-35 {lx:.1} {ly:.1})">{}</text>"#,
            xml_escape(&r.variant)
        );
    }
    if let Some(m) = reference_mae.filter(|m| m.is_finite()) {
        let _ = writeln!(
            svg,
            r#"<line x1="{LEFT}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="red" stroke-dasharray="6,4"/>"#,
            width - 10.0,
            yy = y(m)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "sidewidth",
    version,
    about = "Sidewalk width from semantic masks and dense 3D geometry"
)]
pub struct Cli {
    /// Global random seed (RANSAC per-image seeds and scene synthesis).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Pipeline configuration file (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for batch commands [default: logical CPU count].
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark with exact ground truth.
    Synth(SynthArgs),
    /// Measure every image of a manifest; writes JSON lines.
    Measure(MeasureArgs),
    /// Score measurement results against reference widths.
    Eval(EvalArgs),
    /// Re-calibrate one measurement run over a range of camera heights.
    Sweep(SweepArgs),
    /// Run pipeline variants with one component removed or changed.
    Ablate(AblateArgs),
    /// Evaluate a manifest under a geometry-backbone protocol category.
    Protocol(ProtocolArgs),
    /// Sample camera positions along a street network.
    Sample(SampleArgs),
    /// Aggregate image widths to network segments.
    Aggregate(AggregateArgs),
    /// MAE bar chart (SVG) from a report CSV.
    Plot(PlotArgs),
    /// Check that a manifest, or individual mask and tensor files, load cleanly.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of scenes.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value_t = 0.56)]
    pub width_min: f64,
    #[arg(long, default_value_t = 3.94)]
    pub width_max: f64,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Square image size in pixels.
    #[arg(long, default_value_t = 1024)]
    pub size: usize,
    #[arg(long, default_value_t = 90.0)]
    pub fov: f64,
    /// True camera height in metres.
    #[arg(long, default_value_t = 2.5)]
    pub camera_height: f64,
    /// Road width; the camera travels along its centreline.
    #[arg(long, default_value_t = 6.0)]
    pub road_width: f64,
    /// Radial noise standard deviation as a fraction of range.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub scale_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub scale_max: f64,
    /// Also write depth tensors and manifest_depth.json.
    #[arg(long)]
    pub depth: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeometryArg {
    PointMap,
    DepthMap,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON-lines output [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Camera height in metres, overriding manifest and configuration.
    #[arg(long)]
    pub h_cam: Option<f64>,
    #[arg(long, value_enum, default_value_t = GeometryArg::PointMap)]
    pub geometry: GeometryArg,
    /// Treat geometry as metric (scale fixed to 1).
    #[arg(long)]
    pub native: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON-lines results from `measure`.
    #[arg(long)]
    pub results: PathBuf,
    /// Manifest supplying reference widths missing from the results.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    pub label: String,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated camera heights in metres.
    #[arg(long, value_delimiter = ',', default_value = "2.0,2.25,2.5,2.75,3.0")]
    pub heights: Vec<f64>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Per-image widths at every height, JSON lines.
    #[arg(long)]
    pub widths: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Full,
    NoScale,
    PinholeOnly,
    FullWidth,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "full,no-scale,pinhole-only,full-width"
    )]
    pub variants: Vec<VariantArg>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// MAE bar chart with the full pipeline as dashed reference.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// 1: native metric geometry; 2: depth maps; 3: point maps.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub category: u8,
    #[arg(long)]
    pub h_cam: Option<f64>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Per-image JSON lines.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// GeoJSON FeatureCollection of LineStrings with a segment_id property.
    #[arg(long)]
    pub network: PathBuf,
    /// Sample plan CSV [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip grid deduplication.
    #[arg(long)]
    pub no_dedup: bool,
    /// Imagery endpoint; writes one request URL per line to --requests.
    #[arg(long, requires = "requests")]
    pub endpoint: Option<String>,
    #[arg(long, requires = "endpoint")]
    pub requests: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub network: PathBuf,
    /// Segment GeoJSON [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Coverage summary JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Report CSV from eval, ablate, sweep or protocol.
    #[arg(long, required = true, num_args = 1..)]
    pub csv: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Row whose MAE is drawn as the dashed reference line.
    #[arg(long)]
    pub reference: Option<String>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, required_unless_present_any = ["mask", "tensor"])]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub mask: Vec<PathBuf>,
    #[arg(long)]
    pub tensor: Vec<PathBuf>,
}

mod args;

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::Parser;
use serde::Serialize;

use sidewidth::eval::{
    evaluate_outcomes, evaluate_records, format_table, mae_bar_chart_svg, run_protocol_outcomes,
    run_variant, sweep_manifest, ProtocolSpec, ReportRow, Variant,
};
use sidewidth::ingest::{
    check_pairing, load_geometry, load_manifest, load_mask, ImageManifestEntry,
};
use sidewidth::netsample::{
    aggregate_segments, coverage_report, dedup_grid, read_network, sample_network, sample_requests,
    segment_records_geojson, HttpProvider, ImageSource, ImageryProvider,
};
use sidewidth::pipeline::{
    measure_manifest, CalibrationMode, GeometrySource, MeasurementRecord, RecordStatus, RunOptions,
};
use sidewidth::synth::{generate_benchmark, BenchmarkOptions};
use sidewidth::PipelineConfig;

use args::*;

/// An error together with the process exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Self {
            code: 1,
            error: e.into(),
        }
    }
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

type Outcome = Result<(), Failure>;

struct Ctx {
    config: PipelineConfig,
    seed: u64,
    workers: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    let config = match path {
        None => PipelineConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))
                .map_err(usage)?;
            toml::from_str(&text)
                .with_context(|| format!("parsing config {}", p.display()))
                .map_err(usage)?
        }
    };
    config
        .validate()
        .map_err(|e| usage(anyhow!("invalid config: {e}")))?;
    Ok(config)
}

fn run(cli: Cli) -> Outcome {
    let mut config = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.plane.ransac.seed = seed;
    }
    let workers = cli
        .workers
        .map(|w| w as usize)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let ctx = Ctx {
        seed: config.plane.ransac.seed,
        config,
        workers,
    };
    match cli.command {
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Measure(a) => cmd_measure(&ctx, a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(&ctx, a),
        Command::Ablate(a) => cmd_ablate(&ctx, a),
        Command::Protocol(a) => cmd_protocol(&ctx, a),
        Command::Sample(a) => cmd_sample(&ctx, a),
        Command::Aggregate(a) => cmd_aggregate(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Validate(a) => cmd_validate(&ctx, a),
    }
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn manifest(path: &Path) -> Result<Vec<ImageManifestEntry>, Failure> {
    load_manifest(path).map_err(usage)
}

fn check_height(h: Option<f64>) -> Result<Option<f64>, Failure> {
    match h {
        Some(v) if !(v > 0.0 && v.is_finite()) => {
            Err(usage(anyhow!("--h-cam must be > 0, got {v}")))
        }
        _ => Ok(h),
    }
}

fn write_records(path: Option<&Path>, records: &[MeasurementRecord]) -> anyhow::Result<()> {
    let mut out = output(path)?;
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    out.flush()?;
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<MeasurementRecord>, Failure> {
    let file = File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(usage)?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .with_context(|| format!("{}: line {}", path.display(), i + 1))
            .map_err(usage)?;
        records.push(rec);
    }
    Ok(records)
}

fn write_csv(path: &Path, rows: &[ReportRow]) -> anyhow::Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn status_summary(records: &[MeasurementRecord]) -> String {
    let count = |s| records.iter().filter(|r| r.status == s).count();
    format!(
        "{} accepted, {} rejected, {} failed",
        count(RecordStatus::Accepted),
        count(RecordStatus::Rejected),
        count(RecordStatus::Failed)
    )
}

fn pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()?)
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> Outcome {
    let options = BenchmarkOptions {
        n_scenes: a.n as usize,
        width_range_m: (a.width_min, a.width_max),
        seed: ctx.seed,
        image_width: a.size,
        image_height: a.size,
        fov_deg: a.fov,
        camera_height_m: a.camera_height,
        road_width_m: a.road_width,
        noise_sigma_frac: a.noise,
        global_scale_range: (a.scale_min, a.scale_max),
        emit_depth: a.depth,
        ..BenchmarkOptions::default()
    };
    options.validate().map_err(usage)?;
    let files = pool(ctx.workers)?.install(|| generate_benchmark(&options, &a.out))?;
    eprintln!(
        "wrote {} scenes; manifest {}",
        files.entries.len(),
        files.manifest_path.display()
    );
    Ok(())
}

fn cmd_measure(ctx: &Ctx, a: MeasureArgs) -> Outcome {
    let entries = manifest(&a.manifest)?;
    let options = RunOptions {
        geometry: match a.geometry {
            GeometryArg::PointMap => GeometrySource::PointMap,
            GeometryArg::DepthMap => GeometrySource::DepthMap,
        },
        calibration: if a.native {
            CalibrationMode::Native
        } else {
            CalibrationMode::CameraHeight
        },
        h_cam_override: check_height(a.h_cam)?,
    };
    let outcomes = measure_manifest(&entries, &ctx.config, &options, ctx.workers);
    let records: Vec<_> = outcomes.iter().map(|o| o.record()).collect();
    write_records(a.out.as_deref(), &records)?;
    eprintln!("{}", status_summary(&records));
    if !records.iter().any(MeasurementRecord::is_accepted) {
        return Err(anyhow!("no image produced an accepted measurement").into());
    }
    Ok(())
}

fn report_out(rows: &[ReportRow], csv: Option<&Path>) -> anyhow::Result<()> {
    print!("{}", format_table(rows));
    if let Some(p) = csv {
        write_csv(p, rows)?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Outcome {
    let mut records = read_records(&a.results)?;
    if let Some(m) = &a.manifest {
        let truth: HashMap<String, ImageManifestEntry> = manifest(m)?
            .into_iter()
            .map(|e| (e.image_id.clone(), e))
            .collect();
        for r in &mut records {
            if let Some(e) = truth.get(&r.image_id) {
                r.reference_width_m = r.reference_width_m.or(e.reference_width_m);
            }
        }
    }
    let report = evaluate_records(&records)?;
    report_out(&[ReportRow::new(a.label, &report)], a.csv.as_deref())?;
    Ok(())
}

#[derive(Serialize)]
struct SweepWidth<'a> {
    h_cam: f64,
    image_id: &'a str,
    status: RecordStatus,
    width_m: Option<f64>,
}

fn cmd_sweep(ctx: &Ctx, a: SweepArgs) -> Outcome {
    for &h in &a.heights {
        check_height(Some(h))?;
    }
    let entries = manifest(&a.manifest)?;
    let points = sweep_manifest(&entries, &ctx.config, &a.heights, ctx.workers)?;
    let rows: Vec<_> = points
        .iter()
        .map(|p| ReportRow::new(format!("h_cam={:.2}", p.h_cam), &p.report))
        .collect();
    report_out(&rows, a.csv.as_deref())?;
    if let Some(path) = &a.widths {
        let mut out = output(Some(path))?;
        for p in &points {
            for r in &p.records {
                let line = SweepWidth {
                    h_cam: p.h_cam,
                    image_id: &r.image_id,
                    status: r.status,
                    width_m: r.width_m,
                };
                writeln!(out, "{}", serde_json::to_string(&line)?)?;
            }
        }
        out.flush()?;
    }
    if let Some(path) = &a.svg {
        write_text(path, &mae_bar_chart_svg(&rows, None))?;
    }
    Ok(())
}

fn cmd_ablate(ctx: &Ctx, a: AblateArgs) -> Outcome {
    let entries = manifest(&a.manifest)?;
    let mut rows = Vec::new();
    for v in &a.variants {
        let variant = match v {
            VariantArg::Full => Variant::Full,
            VariantArg::NoScale => Variant::NoScale,
            VariantArg::PinholeOnly => Variant::PinholeOnly,
            VariantArg::FullWidth => Variant::FullWidth,
        };
        let outcomes = run_variant(
            &entries,
            &ctx.config,
            &RunOptions::default(),
            variant,
            ctx.workers,
        );
        match evaluate_outcomes(&outcomes) {
            Ok(report) => rows.push(ReportRow::new(variant.name(), &report)),
            Err(e) => eprintln!("{}: {e}", variant.name()),
        }
    }
    if rows.is_empty() {
        return Err(anyhow!("no variant produced an evaluable result").into());
    }
    report_out(&rows, a.csv.as_deref())?;
    if let Some(path) = &a.svg {
        let reference = rows
            .iter()
            .find(|r| r.variant == Variant::Full.name())
            .map(|r| r.mae_m);
        write_text(path, &mae_bar_chart_svg(&rows, reference))?;
    }
    Ok(())
}

fn cmd_protocol(ctx: &Ctx, a: ProtocolArgs) -> Outcome {
    let entries = manifest(&a.manifest)?;
    let spec = ProtocolSpec::category(a.category).map_err(usage)?;
    let outcomes = run_protocol_outcomes(
        &entries,
        &ctx.config,
        &spec,
        check_height(a.h_cam)?,
        ctx.workers,
    )?;
    if let Some(path) = &a.out {
        let records: Vec<_> = outcomes.iter().map(|o| o.record()).collect();
        write_records(Some(path), &records)?;
    }
    let report = evaluate_outcomes(&outcomes)?;
    report_out(
        &[ReportRow::new(format!("category_{}", a.category), &report)],
        a.csv.as_deref(),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct PlanRow<'a> {
    segment_id: &'a str,
    lon: f64,
    lat: f64,
    chainage_m: f64,
    heading_deg: f64,
}

fn cmd_sample(ctx: &Ctx, a: SampleArgs) -> Outcome {
    let network = read_network(&a.network).map_err(usage)?;
    let mut points = sample_network(&network, &ctx.config.network)?;
    if !a.no_dedup {
        points = dedup_grid(&points, ctx.config.network.dedup_cell_m)?;
    }
    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    for p in &points {
        for heading in [p.headings_deg.0, p.headings_deg.1] {
            w.serialize(PlanRow {
                segment_id: &p.segment_id,
                lon: p.position.0,
                lat: p.position.1,
                chainage_m: p.chainage_m,
                heading_deg: heading,
            })?;
        }
    }
    w.flush()?;
    if let (Some(endpoint), Some(path)) = (a.endpoint, a.requests) {
        let provider = HttpProvider { endpoint };
        let mut out = output(Some(&path))?;
        for r in sample_requests(&points) {
            if let Ok(ImageSource::Url(url)) = provider.locate(&r) {
                writeln!(out, "{}\t{url}", r.request_id)?;
            }
        }
        out.flush()?;
    }
    eprintln!(
        "{} sample points on {} segments",
        points.len(),
        network.len()
    );
    Ok(())
}

fn cmd_aggregate(a: AggregateArgs) -> Outcome {
    let network = read_network(&a.network).map_err(usage)?;
    let records = read_records(&a.results)?;
    let segments = aggregate_segments(&records);
    let coverage = coverage_report(&segments, &network)?;
    let mut out = output(a.out.as_deref())?;
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&segment_records_geojson(&segments, &network))?
    )?;
    out.flush()?;
    if let Some(path) = &a.summary {
        write_text(path, &(serde_json::to_string_pretty(&coverage)? + "\n"))?;
    }
    eprintln!("{coverage}");
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Outcome {
    let mut rows: Vec<ReportRow> = Vec::new();
    for path in &a.csv {
        let mut r = csv::Reader::from_path(path)
            .with_context(|| format!("opening {}", path.display()))
            .map_err(usage)?;
        for row in r.deserialize() {
            rows.push(
                row.with_context(|| format!("reading {}", path.display()))
                    .map_err(usage)?,
            );
        }
    }
    let reference = match &a.reference {
        None => None,
        Some(name) => Some(
            rows.iter()
                .find(|r| &r.variant == name)
                .map(|r| r.mae_m)
                .ok_or_else(|| usage(anyhow!("no row named {name}")))?,
        ),
    };
    write_text(&a.out, &mae_bar_chart_svg(&rows, reference))?;
    Ok(())
}

fn cmd_validate(ctx: &Ctx, a: ValidateArgs) -> Outcome {
    let mut problems = 0usize;
    let mut report = |what: &str, result: anyhow::Result<()>| match result {
        Ok(()) => println!("ok      {what}"),
        Err(e) => {
            problems += 1;
            println!("invalid {what}: {e:#}");
        }
    };
    if let Some(m) = &a.manifest {
        match load_manifest(m) {
            Err(e) => report(&m.display().to_string(), Err(e.into())),
            Ok(entries) => {
                for e in &entries {
                    let check = || -> anyhow::Result<()> {
                        let mask = load_mask(&e.mask_path, &ctx.config.class_map)?;
                        let geometry = load_geometry(&e.point_map_path)?;
                        check_pairing(&mask, geometry.dimensions())?;
                        Ok(())
                    };
                    report(&e.image_id, check());
                }
            }
        }
    }
    for p in &a.mask {
        report(
            &p.display().to_string(),
            load_mask(p, &ctx.config.class_map)
                .map(drop)
                .map_err(Into::into),
        );
    }
    for p in &a.tensor {
        report(
            &p.display().to_string(),
            load_geometry(p).map(drop).map_err(Into::into),
        );
    }
    if problems > 0 {
        return Err(anyhow!("{problems} invalid item(s)").into());
    }
    Ok(())
}

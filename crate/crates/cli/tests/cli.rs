//! End-to-end behaviour of the `sidewidth` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sidewidth::PipelineConfig;

fn sidewidth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sidewidth"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: &str, seed: &str) -> PathBuf {
    let out = sidewidth(&[
        "--seed",
        seed,
        "synth",
        "--n",
        n,
        "--size",
        "192",
        "--out",
        s(dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir.join("manifest.json")
}

fn widths(path: &Path) -> Vec<Option<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["width_m"].as_f64())
        .collect()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

const NETWORK: &str = r#"{"type": "FeatureCollection", "features": [
  {"type": "Feature", "properties": {"segment_id": "a"},
   "geometry": {"type": "LineString", "coordinates": [[13.4000, 52.5000], [13.4015, 52.5000]]}},
  {"type": "Feature", "properties": {"segment_id": 7},
   "geometry": {"type": "LineString", "coordinates": [[13.4000, 52.5010], [13.4000, 52.5016]]}}
]}"#;

#[test]
fn synth_is_reproducible_per_seed() {
    let root = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        root.path().join("a"),
        root.path().join("b"),
        root.path().join("c"),
    );
    synth(&a, "3", "5");
    synth(&b, "3", "5");
    synth(&c, "3", "6");
    assert_eq!(tree(&a), tree(&b));
    assert_ne!(tree(&a), tree(&c));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&sidewidth(&["synth", "--n", "0", "--out", s(dir.path())])),
        2
    );
    assert_eq!(code(&sidewidth(&["measure"])), 2);
    assert_eq!(
        code(&sidewidth(&[
            "--workers",
            "0",
            "validate",
            "--mask",
            "x.png"
        ])),
        2
    );
    assert_eq!(
        code(&sidewidth(&[
            "protocol",
            "--manifest",
            "m.json",
            "--category",
            "4"
        ])),
        2
    );

    let bad_config = dir.path().join("bad.toml");
    fs::write(&bad_config, "[measure]\nband_fraction = 2.0\n").unwrap();
    let out = sidewidth(&["--config", s(&bad_config), "validate", "--mask", "x.png"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("band_fraction"));
}

#[test]
fn example_config_is_the_default() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/config.example.toml");
    let parsed: PipelineConfig = toml::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(parsed, PipelineConfig::default());
}

#[test]
fn h_cam_flag_beats_manifest_height() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "3", "1");
    let (base, doubled) = (
        dir.path().join("base.jsonl"),
        dir.path().join("doubled.jsonl"),
    );
    assert_eq!(
        code(&sidewidth(&[
            "measure",
            "--manifest",
            s(&manifest),
            "--out",
            s(&base)
        ])),
        0
    );
    let out = sidewidth(&[
        "measure",
        "--manifest",
        s(&manifest),
        "--h-cam",
        "5.0",
        "--out",
        s(&doubled),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for (a, b) in widths(&base).into_iter().zip(widths(&doubled)) {
        let (a, b) = (a.unwrap(), b.unwrap());
        assert!((b / a - 2.0).abs() < 1e-9, "{a} -> {b}");
    }
    let out = sidewidth(&["measure", "--manifest", s(&manifest), "--h-cam", "-1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_file_is_reported_and_the_rest_processed() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "3", "2");
    fs::remove_file(dir.path().join("scene_0001_mask.png")).unwrap();
    let results = dir.path().join("r.jsonl");
    let out = sidewidth(&["measure", "--manifest", s(&manifest), "--out", s(&results)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let lines: Vec<serde_json::Value> = fs::read_to_string(&results)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let statuses: Vec<_> = lines
        .iter()
        .map(|l| l["status"].as_str().unwrap())
        .collect();
    assert_eq!(statuses, ["accepted", "failed", "accepted"]);
    assert!(lines[1]["reason"]
        .as_str()
        .unwrap()
        .contains("scene_0001_mask.png"));

    let out = sidewidth(&["validate", "--manifest", s(&manifest)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("invalid"));
}

#[test]
fn nothing_accepted_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "2", "3");
    for id in ["scene_0000", "scene_0001"] {
        fs::remove_file(dir.path().join(format!("{id}.npy"))).unwrap();
    }
    let out = sidewidth(&["measure", "--manifest", s(&manifest)]);
    assert_eq!(code(&out), 1);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2);
}

#[test]
fn eval_without_ground_truth_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "2", "4");
    let results = dir.path().join("r.jsonl");
    assert_eq!(
        code(&sidewidth(&[
            "measure",
            "--manifest",
            s(&manifest),
            "--out",
            s(&results)
        ])),
        0
    );

    // Strip the reference widths that synth wrote.
    let stripped: String = fs::read_to_string(&results)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("reference_width_m");
            v.to_string() + "\n"
        })
        .collect();
    fs::write(&results, stripped).unwrap();
    let out = sidewidth(&["eval", "--results", s(&results)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("no ground truth"), "{}", stderr(&out));

    let csv = dir.path().join("eval.csv");
    let out = sidewidth(&[
        "eval",
        "--results",
        s(&results),
        "--manifest",
        s(&manifest),
        "--csv",
        s(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(fs::read_to_string(&csv)
        .unwrap()
        .starts_with("variant,n,mae_m"));
}

#[test]
fn protocol_rejects_the_wrong_geometry_kind() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "2", "5");
    let out = sidewidth(&["protocol", "--manifest", s(&manifest), "--category", "2"]);
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("wrong geometry kind"),
        "{}",
        stderr(&out)
    );
    let out = sidewidth(&["protocol", "--manifest", s(&manifest), "--category", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn malformed_network_reports_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.geojson");
    fs::write(
        &path,
        "{\"type\": \"FeatureCollection\",\n  \"features\": [,]}",
    )
    .unwrap();
    let out = sidewidth(&["sample", "--network", s(&path)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 2, column"), "{}", stderr(&out));
}

#[test]
fn sample_plan_and_requests() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.geojson");
    fs::write(&net, NETWORK).unwrap();
    let (plan, requests) = (dir.path().join("plan.csv"), dir.path().join("req.tsv"));
    let out = sidewidth(&[
        "sample",
        "--network",
        s(&net),
        "--out",
        s(&plan),
        "--endpoint",
        "https://imagery.example/api",
        "--requests",
        s(&requests),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let plan = fs::read_to_string(plan).unwrap();
    let mut lines = plan.lines();
    assert_eq!(
        lines.next(),
        Some("segment_id,lon,lat,chainage_m,heading_deg")
    );
    // Two headings per point.
    let rows = lines.count();
    assert!(rows > 0 && rows % 2 == 0);
    let requests = fs::read_to_string(requests).unwrap();
    assert_eq!(requests.lines().count(), rows);
    assert!(requests
        .lines()
        .all(|l| l.contains("https://imagery.example/api?size=640x640&location=")));
}

#[test]
fn aggregate_writes_segments_and_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.geojson");
    fs::write(&net, NETWORK).unwrap();
    let results = dir.path().join("r.jsonl");
    fs::write(
        &results,
        concat!(
            r#"{"image_id":"x1","status":"accepted","width_m":2.0,"n_valid_columns":40,"segment_id":"a"}"#, "\n",
            r#"{"image_id":"x2","status":"accepted","width_m":3.0,"n_valid_columns":40,"segment_id":"a"}"#, "\n",
            r#"{"image_id":"x3","status":"rejected","width_m":null,"n_valid_columns":3,"reason":"insufficient_valid_columns","segment_id":"7"}"#, "\n",
        ),
    )
    .unwrap();
    let (geo, summary) = (
        dir.path().join("seg.geojson"),
        dir.path().join("summary.json"),
    );
    let out = sidewidth(&[
        "aggregate",
        "--results",
        s(&results),
        "--network",
        s(&net),
        "--out",
        s(&geo),
        "--summary",
        s(&summary),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(summary).unwrap()).unwrap();
    assert_eq!(summary["covered"], 1);
    assert_eq!(summary["total"], 2);
    assert_eq!(summary["coverage_pct"], 50.0);
    let geo: serde_json::Value = serde_json::from_str(&fs::read_to_string(geo).unwrap()).unwrap();
    assert_eq!(geo["type"], "FeatureCollection");
}

//! Interchange files written by numpy and Pillow load as expected, and our
//! writer reproduces numpy's bytes.

use std::fs;
use std::path::PathBuf;

use sidewidth::ingest::{
    encode_tensor, load_depth_map, load_geometry, load_manifest, load_mask, load_point_map,
    load_tensor, ClassMap, Geometry, IngestError, SemanticClass,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn numpy_point_map_values_and_validity() {
    let pm = load_point_map(&fixture("points_2x3.npy")).unwrap();
    assert_eq!((pm.width(), pm.height()), (3, 2));
    // numpy: arange(18).reshape(2, 3, 3) * 0.5 - 1, row 0 col 1 set to NaN.
    assert_eq!(
        pm.get(0, 0).unwrap(),
        nalgebra::Vector3::new(-1.0, -0.5, 0.0)
    );
    assert!(pm.get(1, 0).is_none());
    assert_eq!(pm.get(2, 1).unwrap(), nalgebra::Vector3::new(6.5, 7.0, 7.5));
}

#[test]
fn writer_matches_numpy_bytes() {
    for name in ["points_2x3.npy", "depth_2x3.npy"] {
        let bytes = fs::read(fixture(name)).unwrap();
        let tensor = load_tensor(&fixture(name)).unwrap();
        assert_eq!(encode_tensor(&tensor), bytes, "{name}");
    }
}

#[test]
fn numpy_depth_validity() {
    let d = load_depth_map(&fixture("depth_2x3.npy")).unwrap();
    let valid: Vec<bool> = (0..2)
        .flat_map(|v| (0..3).map(move |u| (u, v)))
        .map(|(u, v)| d.get(u, v).is_some())
        .collect();
    // 1.5, 2.0, inf / 0.0, -1.0, 3.25
    assert_eq!(valid, vec![true, true, false, false, false, true]);
    assert!(matches!(
        load_geometry(&fixture("depth_2x3.npy")).unwrap(),
        Geometry::Depth(_)
    ));
    assert!(matches!(
        load_point_map(&fixture("depth_2x3.npy")),
        Err(IngestError::WrongLastDim {
            expected: 3,
            found: 1,
            ..
        })
    ));
}

#[test]
fn unsupported_numpy_layouts_rejected() {
    assert!(matches!(
        load_tensor(&fixture("float64_2x3.npy")),
        Err(IngestError::UnsupportedDtype { .. })
    ));
    assert!(matches!(
        load_tensor(&fixture("big_endian_2x3.npy")),
        Err(IngestError::UnsupportedDtype { .. })
    ));
    assert!(matches!(
        load_tensor(&fixture("fortran_2x3.npy")),
        Err(IngestError::MalformedHeader { .. })
    ));
}

#[test]
fn pillow_masks() {
    let mask = load_mask(&fixture("mask_2x3.png"), &ClassMap::default()).unwrap();
    use SemanticClass::*;
    // Raw ids [[0, 1, 255], [7, 1, 0]].
    assert_eq!(
        mask.classes(),
        &[Road, Sidewalk, Other, Other, Sidewalk, Road]
    );
    let custom = ClassMap {
        road: vec![7],
        sidewalk: vec![0],
    };
    let mask = load_mask(&fixture("mask_2x3.png"), &custom).unwrap();
    assert_eq!(
        mask.classes(),
        &[Sidewalk, Other, Other, Road, Other, Sidewalk]
    );
    assert!(matches!(
        load_mask(&fixture("mask_rgb_2x3.png"), &ClassMap::default()),
        Err(IngestError::Raster { .. })
    ));
}

#[test]
fn manifest_with_relative_paths_and_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(fixture("points_2x3.npy"), dir.path().join("p.npy")).unwrap();
    fs::copy(fixture("mask_2x3.png"), dir.path().join("m.png")).unwrap();
    let text = r#"[{"image_id": "a", "point_map_path": "p.npy", "mask_path": "m.png",
                   "camera_height_m": 2.4, "backbone": "any", "segment_id": "w1"}]"#;
    fs::write(dir.path().join("manifest.json"), text).unwrap();
    let entries = load_manifest(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(entries[0].camera_height_m, Some(2.4));
    assert_eq!(entries[0].segment_id.as_deref(), Some("w1"));
    load_point_map(&entries[0].point_map_path).unwrap();
    load_mask(&entries[0].mask_path, &ClassMap::default()).unwrap();

    let bad = r#"[{"image_id": "a", "point_map_path": "p.npy", "mask_path": "m.png", "camera_height_m": -1}]"#;
    fs::write(dir.path().join("bad.json"), bad).unwrap();
    assert!(matches!(
        load_manifest(&dir.path().join("bad.json")),
        Err(IngestError::Manifest { .. })
    ));
}

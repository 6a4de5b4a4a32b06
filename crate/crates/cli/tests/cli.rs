use std::fs;
use std::process::{Command, Output};

fn evdeblur(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evdeblur")).args(args).output().expect("spawn evdeblur")
}

const SMALL: &str = r#"{
  "scene": {
    "width": 24,
    "height": 16,
    "generator": { "kind": "gaussian_field", "count": 6, "scale_range": [2.0, 4.0], "palette": [], "margin": 3.0 },
    "seed": 2
  },
  "motion": { "n_blurred": 2, "n_event_views": 3, "n_test": 1, "blur_span_px": 3.0 }
}"#;

#[test]
fn bad_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"scene": {"width": 8}, "nonsense": 1}"#).unwrap();
    let out = evdeblur(&["synth", "--config", cfg.to_str().unwrap(), "--out", "x.ppm"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_file_exits_with_4() {
    let out = evdeblur(&["synth", "--config", "/nonexistent/run.json", "--out", "x.ppm"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn synth_capture_and_mask() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.json");
    fs::write(&cfg, SMALL).unwrap();
    let cfg = cfg.to_str().unwrap();
    let gt = dir.path().join("gt.ppm");
    let out = evdeblur(&["synth", "--config", cfg, "--out", gt.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read(&gt).unwrap().starts_with(b"P6"));

    let session = dir.path().join("session");
    let out = evdeblur(&["capture", "--config", cfg, "--out", session.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(session.join("events.aevt").exists() && session.join("gt.ppm").exists());

    let masks = dir.path().join("masks");
    let out = evdeblur(&["mask", "--image", gt.to_str().unwrap(), "--out", masks.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["weight.pgm", "gate.pgm", "persistence.pgm", "structure.pgm"] {
        assert!(masks.join(name).exists(), "{name}");
    }
}

#[test]
fn gradcheck_single_component() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("grad.json");
    let out = evdeblur(&["gradcheck", "--component", "warp", "--trials", "1", "--out", json.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("pass"));
    let reports: serde_json::Value = serde_json::from_slice(&fs::read(&json).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 1);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "graph": { "arm_lengths": [20.0, 21.41421356237309] },
  "potential": { "v0": 16.7875, "period": 1.0 },
  "drive": { "omega": 0.2, "arms": [
      { "law": "sinusoidal", "strength": -0.3 },
      { "law": "sinusoidal", "strength": 0.3, "phase": 0.4 } ] },
  "packet": { "arm": 2, "center": 10.0, "sigma": 3.0 },
  "numerics": { "k_max": 12.566370614359172, "t_end": 3.0, "sample_dt": 0.25 }
}"#;

fn starwave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_starwave"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn empty_config_is_a_schema_error_naming_graph() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("empty.json");
    fs::write(&config, "").unwrap();
    let out = starwave(&[
        "spectrum",
        "--config",
        path(&config),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("graph"), "{stderr}");
}

#[test]
fn missing_config_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = starwave(&[
        "evolve",
        "--config",
        path(&missing),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn unknown_preset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = starwave(&["spectrum", "--preset", "fig5", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn norm_drift_failure_is_numeric() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    let text = SMALL.replace(
        "\"sample_dt\": 0.25",
        "\"sample_dt\": 0.25, \"norm_drift\": 1e-300",
    );
    fs::write(&config, text).unwrap();
    let out = starwave(&[
        "evolve",
        "--config",
        path(&config),
        "--out",
        path(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn preset_spectrum_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = starwave(&[
        "spectrum",
        "--preset",
        "fig4",
        "--out",
        path(dir.path()),
        "--threads",
        "1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let spectrum = fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    assert_eq!(spectrum.lines().next(), Some("n,k,B,secular_residual"));
    assert!(spectrum.lines().count() > 900);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["scenario"], "fig4");
    assert_eq!(manifest["command"], "spectrum");
}

#[test]
fn evolve_rerun_from_manifest_matches_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    fs::write(&config, SMALL).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = starwave(&[
        "evolve",
        "--config",
        path(&config),
        "--out",
        path(&a),
        "--strict-oracle",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest = a.join("manifest.json");
    let out = starwave(&["evolve", "--config", path(&manifest), "--out", path(&b)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut compared = 0;
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        if name.to_string_lossy().ends_with(".csv") {
            assert_eq!(
                fs::read(a.join(&name)).unwrap(),
                fs::read(b.join(&name)).unwrap(),
                "{name:?}"
            );
            compared += 1;
        }
    }
    assert_eq!(compared, 4);
}

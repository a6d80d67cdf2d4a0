use std::fs;
use std::path::Path;

use proptest::prelude::*;
use starwave::scenario::{parse_config, PRESETS};
use starwave::{preset, run, Command, ConfigError, Error, RunConfig, RunManifest, RunOptions};

const SMALL: &str = r#"{
  "graph": { "arm_lengths": [20.0, 21.41421356237309] },
  "potential": { "v0": 16.7875, "period": 1.0 },
  "drive": { "omega": 0.2, "arms": [
      { "law": "sinusoidal", "strength": -0.3 },
      { "law": "sinusoidal", "strength": 0.3, "phase": 0.4 } ] },
  "packet": { "arm": 2, "center": 10.0, "sigma": 3.0 },
  "numerics": { "k_max": 12.566370614359172, "t_end": 4.0, "sample_dt": 0.25 },
  "output": { "density_every": 4, "density_stride": 2 }
}"#;

fn small() -> RunConfig {
    parse_config(SMALL, None).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap()
}

#[test]
fn evolve_writes_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = run(&small(), Command::Evolve, dir.path(), RunOptions::default()).unwrap();
    let names: Vec<&str> = manifest.outputs.keys().map(String::as_str).collect();
    assert_eq!(
        names,
        [
            "density_arm1.csv",
            "density_arm2.csv",
            "norms.csv",
            "spectrum.csv"
        ]
    );
    let norms = String::from_utf8(read(dir.path(), "norms.csv")).unwrap();
    let mut lines = norms.lines();
    assert_eq!(lines.next(), Some("t,P_1,P_2,total"));
    assert_eq!(lines.count(), 17);
    let spectrum = String::from_utf8(read(dir.path(), "spectrum.csv")).unwrap();
    assert_eq!(spectrum.lines().next(), Some("n,k,B,secular_residual"));
    assert_eq!(spectrum.lines().count(), manifest.modes + 1);
    assert!(manifest.final_norm_defect.unwrap() < 1e-6);
    assert!(!dir.path().join(".manifest.json.tmp").exists());
    let on_disk: RunManifest = serde_json::from_slice(&read(dir.path(), "manifest.json")).unwrap();
    assert_eq!(on_disk, manifest);
}

#[test]
fn rerun_from_manifest_is_byte_identical() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let m1 = run(
        &small(),
        Command::Evolve,
        first.path(),
        RunOptions::default(),
    )
    .unwrap();
    let text = fs::read_to_string(first.path().join("manifest.json")).unwrap();
    let config = parse_config(&text, None).unwrap();
    assert_eq!(config, small());
    let m2 = run(
        &config,
        Command::Evolve,
        second.path(),
        RunOptions::default(),
    )
    .unwrap();
    assert_eq!(m1.outputs, m2.outputs);
    for name in m1.outputs.keys() {
        assert_eq!(
            read(first.path(), name),
            read(second.path(), name),
            "{name}"
        );
    }
}

#[test]
fn verify_writes_oracle_and_audit_tables() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small();
    config.numerics.k_max = Some(6.0);
    let m = run(
        &config,
        Command::Verify,
        dir.path(),
        RunOptions {
            strict_oracle: true,
        },
    )
    .unwrap();
    let digest = m.verification.unwrap();
    assert_eq!(digest.mismatches, 0);
    let table = String::from_utf8(read(dir.path(), "coupling_verification.csv")).unwrap();
    assert_eq!(
        table.lines().next(),
        Some("matrix,arm,n,m,analytic,quadrature,rel_err")
    );
    assert_eq!(table.lines().count(), digest.entries_checked + 1);
    let audit = String::from_utf8(read(dir.path(), "formula_audit.csv")).unwrap();
    assert!(audit.lines().any(|l| l.starts_with("A_diag,")));
}

#[test]
fn sweep_requires_sweep_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let err = run(&small(), Command::Sweep, dir.path(), RunOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn sweep_writes_grid_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replacen(
        "\"output\"",
        "\"analysis\": { \"kind\": \"sweep\", \"points\": 3, \"arm\": 2, \"target\": 1 },\n  \"output\"",
        1,
    );
    let config = parse_config(&text, None).unwrap();
    let m = run(&config, Command::Sweep, dir.path(), RunOptions::default()).unwrap();
    let table = String::from_utf8(read(dir.path(), "sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "phi2,P_1,P_2");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,"));
    assert!(m.summary.contains_key("argmax_phase"));
}

#[test]
fn error_classes_map_to_exit_codes() {
    let empty = parse_config("", None).unwrap_err();
    assert!(matches!(&empty, ConfigError::Schema { message, .. } if message.contains("graph")));
    assert_eq!(Error::from(empty).exit_code(), 2);

    let mut config = small();
    config.packet.center = 2.0;
    let dir = tempfile::tempdir().unwrap();
    let err = run(&config, Command::Evolve, dir.path(), RunOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");

    let mut config = small();
    config.numerics.norm_drift = 1e-300;
    let err = run(&config, Command::Evolve, dir.path(), RunOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");

    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let err = run(
        &small(),
        Command::Spectrum,
        &blocker.join("out"),
        RunOptions::default(),
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");

    assert!(matches!(
        parse_config(r#"{"preset": "fig9"}"#, None),
        Err(ConfigError::UnknownPreset(_))
    ));
    assert!(matches!(
        parse_config(r#"{"preset": "fig4", "extra": 1}"#, None),
        Err(ConfigError::Schema { .. })
    ));
}

#[test]
fn presets_expand_to_explicit_configs() {
    for name in PRESETS {
        let config = parse_config("", Some(name)).unwrap();
        let value = serde_json::to_value(&config).unwrap();
        for key in ["k_max", "t_end", "sample_dt"] {
            assert!(value["numerics"][key].is_number(), "{name}: {key}");
        }
        assert!(value["output"]["density_every"].is_number());
        assert_eq!(config.scenario, name);
        assert_eq!(
            parse_config(&serde_json::to_string(&config).unwrap(), None).unwrap(),
            config
        );
    }
    let fig6 = preset("fig6").unwrap().resolved().unwrap();
    assert_eq!(fig6.numerics.t_end, Some(94.25));
    assert!((fig6.numerics.k_max.unwrap() - 8.0 * std::f64::consts::PI).abs() < 1e-15);
    assert!((fig6.numerics.sample_dt.unwrap() - 0.1).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn manifest_round_trip_is_identity(
        center in 9.0f64..11.0,
        sigma in 1.0f64..3.0,
        strength in -1.0f64..1.0,
        phase in 0.0f64..6.0,
        rtol in 1e-12f64..1e-6,
        k_max in 5.0f64..30.0,
    ) {
        let mut config = small();
        config.packet.center = center;
        config.packet.sigma = sigma;
        config.drive.arms[1] = starwave::FieldLaw::Sinusoidal { strength, phase };
        config.numerics.rtol = rtol;
        config.numerics.k_max = Some(k_max);
        let config = config.resolved().unwrap();
        let manifest = serde_json::json!({ "manifest_version": 1, "config": config });
        let back = parse_config(&manifest.to_string(), None).unwrap();
        prop_assert_eq!(back, config);
    }
}

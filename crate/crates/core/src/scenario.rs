//! Run configuration, figure presets, and the end-to-end pipeline that
//! writes CSV outputs and a run manifest.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error as ThisError;

use crate::analysis::{
    bloch_observables, fit_gaussian_width, phase_grid, phase_sweep, predicted_width,
    saturation_level, BandProjector, BlochObservables, FitOptions, SweepResult, SweepSetup,
};
use crate::audit::{default_audit_modes, formula_audit};
use crate::coupling::{
    apply_oracle_corrections, verify, CouplingSet, LatticePotentialSpec, VerificationDigest,
    VerifyMode,
};
use crate::drive::{DriveSpec, FieldLaw};
use crate::graph::StarGraph;
use crate::propagator::{
    arm_moments, init_gaussian, partial_norms, DensityGrid, Frame, FrameKind, GaussianPacket,
    Propagator, Tolerances, WaveState,
};
use crate::spectrum::SpectralBasis;
use crate::Error;

pub const PRESETS: [&str; 6] = ["fig1", "fig2", "fig3", "fig4", "fig6", "fig7"];

#[derive(Debug, ThisError, Clone, PartialEq)]
pub enum ConfigError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("unknown preset `{0}` (known: fig1, fig2, fig3, fig4, fig6, fig7)")]
    UnknownPreset(String),
    #[error("invalid JSON: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

// ---------------------------------------------------------------------------
// Schema

/// Fully explicit description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub graph: StarGraph,
    pub potential: LatticePotentialSpec,
    pub drive: DriveConfig,
    pub packet: PacketConfig,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default = "default_scenario")]
    pub scenario: String,
    /// Modelling choices not fixed by the physics, carried into the manifest.
    #[serde(default)]
    pub assumptions: Vec<String>,
}

fn default_scenario() -> String {
    "custom".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    #[serde(default)]
    pub omega: Option<f64>,
    pub arms: Vec<FieldLaw>,
}

/// Initial packet; `arm` is one-based here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketConfig {
    pub arm: usize,
    pub center: f64,
    pub sigma: f64,
    #[serde(default)]
    pub carrier: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    /// Defaults to `4 · 2π/d`.
    pub k_max: Option<f64>,
    /// Defaults to two Bloch periods of the strongest field.
    pub t_end: Option<f64>,
    /// Defaults to `T_B / 200`.
    pub sample_dt: Option<f64>,
    pub rtol: f64,
    pub norm_drift: f64,
    pub min_step: f64,
    pub frame: FrameKind,
    pub verify: VerifyMode,
    pub grid_points_per_wavelength: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        let t = Tolerances::default();
        Self {
            k_max: None,
            t_end: None,
            sample_dt: None,
            rtol: t.rtol,
            norm_drift: t.norm_drift,
            min_step: t.min_step,
            frame: FrameKind::Static,
            verify: VerifyMode::Sample,
            grid_points_per_wavelength: 8.0,
        }
    }
}

/// How the packet center is tracked for Bloch analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CenterMethod {
    /// `⟨x⟩` of the lowest-band component.
    #[default]
    Band,
    /// `⟨x⟩` of the full state.
    Plain,
}

/// Which density the width fit sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WidthSource {
    /// Lowest-band component only.
    #[default]
    Band,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalysisConfig {
    #[default]
    None,
    Bloch {
        #[serde(default)]
        center: CenterMethod,
    },
    Width {
        #[serde(default)]
        source: WidthSource,
    },
    Sweep {
        points: usize,
        /// One-based arm whose phase is swept.
        arm: usize,
        /// One-based arm whose dominance is scored.
        target: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub write_density: bool,
    /// Write a density frame every this many samples; defaults to about 100 frames.
    pub density_every: Option<usize>,
    /// Keep every this-many grid point in density files.
    pub density_stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            write_density: true,
            density_every: None,
            density_stride: 1,
        }
    }
}

impl RunConfig {
    pub fn drive_spec(&self) -> DriveSpec {
        DriveSpec {
            omega: self.drive.omega,
            arms: self.drive.arms.clone(),
            potential: self.potential,
        }
    }

    pub fn packet(&self) -> GaussianPacket {
        GaussianPacket {
            arm: self.packet.arm.wrapping_sub(1),
            center: self.packet.center,
            sigma: self.packet.sigma,
            carrier: self.packet.carrier,
        }
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            rtol: self.numerics.rtol,
            norm_drift: self.numerics.norm_drift,
            min_step: self.numerics.min_step,
        }
    }

    /// `T_B = 2π/(d f_ref)` with `f_ref` the largest `|f_j|`, if any field is on.
    pub fn bloch_period(&self) -> Option<f64> {
        let f = self.drive_spec().reference_strength();
        (f > 0.0).then(|| 2.0 * PI / (self.potential.period * f))
    }

    /// Checks cross-field consistency and fills every defaulted value.
    pub fn resolved(mut self) -> Result<Self, ConfigError> {
        let arms = self.graph.arm_count();
        self.drive_spec()
            .validate(arms)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.packet.arm == 0 || self.packet.arm > arms {
            return Err(ConfigError::Invalid(format!(
                "packet.arm must be in 1..={arms}, got {}",
                self.packet.arm
            )));
        }
        let n = &mut self.numerics;
        for (name, v) in [
            ("rtol", n.rtol),
            ("norm_drift", n.norm_drift),
            ("min_step", n.min_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!(
                    "numerics.{name} must be positive, got {v}"
                )));
            }
        }
        if !(n.grid_points_per_wavelength >= 8.0) {
            return Err(ConfigError::Invalid(format!(
                "numerics.grid_points_per_wavelength must be at least 8, got {}",
                n.grid_points_per_wavelength
            )));
        }
        let period = self.potential.period;
        n.k_max.get_or_insert(4.0 * 2.0 * PI / period);
        let tb = self.bloch_period();
        let n = &mut self.numerics;
        let t_end = *n.t_end.get_or_insert(2.0 * tb.unwrap_or(10.0));
        n.sample_dt
            .get_or_insert(tb.map_or(t_end / 200.0, |tb| tb / 200.0));
        for (name, v) in [
            ("k_max", n.k_max),
            ("t_end", n.t_end),
            ("sample_dt", n.sample_dt),
        ] {
            let v = v.unwrap_or(f64::NAN);
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!(
                    "numerics.{name} must be positive, got {v}"
                )));
            }
        }
        let samples = self.sample_count();
        let out = &mut self.output;
        out.density_every
            .get_or_insert(samples.div_ceil(100).max(1));
        if out.density_every == Some(0) || out.density_stride == 0 {
            return Err(ConfigError::Invalid(
                "output.density_every and output.density_stride must be positive".into(),
            ));
        }
        if let AnalysisConfig::Sweep {
            points,
            arm,
            target,
        } = self.analysis
        {
            if points == 0 || arm == 0 || arm > arms || target == 0 || target > arms {
                return Err(ConfigError::Invalid(format!(
                    "analysis sweep needs points > 0 and arms in 1..={arms} (got points={points}, arm={arm}, target={target})"
                )));
            }
            if !matches!(self.drive.arms[arm - 1], FieldLaw::Sinusoidal { .. }) {
                return Err(ConfigError::Invalid(format!(
                    "swept arm {arm} must have a sinusoidal law"
                )));
            }
        }
        Ok(self)
    }

    /// Samples after the initial one, including `t_end`.
    fn sample_count(&self) -> usize {
        let (t_end, dt) = (
            self.numerics.t_end.unwrap_or(0.0),
            self.numerics.sample_dt.unwrap_or(1.0),
        );
        (t_end / dt - 1e-9).ceil().max(1.0) as usize
    }
}

// ---------------------------------------------------------------------------
// Presets

const V0: f64 = 16.7875;

/// Fully explicit configuration of a named figure scenario.
pub fn preset(name: &str) -> Result<RunConfig, ConfigError> {
    let potential = LatticePotentialSpec {
        v0: V0,
        period: 1.0,
        modulation: None,
        offset: 0.0,
    };
    let line = StarGraph::new(vec![40.0 + 2f64.sqrt(), 110.0]).expect("valid lengths");
    let star = StarGraph::default_three_arm();
    let f_star = PI / 10.0;
    let star_drive = |phase2: f64| DriveConfig {
        omega: Some(0.2),
        arms: vec![
            FieldLaw::Sinusoidal {
                strength: f_star,
                phase: 0.0,
            },
            FieldLaw::Sinusoidal {
                strength: -f_star,
                phase: phase2,
            },
            FieldLaw::Sinusoidal {
                strength: -f_star,
                phase: 0.0,
            },
        ],
    };
    let line_packet = PacketConfig {
        arm: 2,
        center: 78.0,
        sigma: 6.0,
        carrier: 0.0,
    };
    let star_packet = PacketConfig {
        arm: 1,
        center: 22.0,
        sigma: 6.0,
        carrier: 0.0,
    };
    let line_note = "1-D line modelled as a 2-arm graph; arm 1 coordinate is negated on the line; lengths (40+√2, 110) keep the packet and its Bloch excursion clear of both ends".to_string();
    let star_notes = vec![
        "arm lengths (40, 40+√2, 40+√3) are not given by the source; chosen rationally independent"
            .to_string(),
        "star packet width σ=6 taken from the 1-D scenario".to_string(),
    ];
    let mut numerics = Numerics::default();
    let config = match name {
        "fig1" => {
            let f = 0.2;
            numerics.t_end = Some(4.0 * 2.0 * PI / f);
            RunConfig {
                graph: line,
                potential,
                drive: DriveConfig {
                    omega: None,
                    arms: vec![
                        FieldLaw::Constant { strength: -f },
                        FieldLaw::Constant { strength: f },
                    ],
                },
                packet: line_packet,
                numerics,
                analysis: AnalysisConfig::Bloch {
                    center: CenterMethod::Band,
                },
                output: OutputConfig::default(),
                scenario: name.into(),
                assumptions: vec![line_note],
            }
        }
        "fig2" => {
            let f = 0.2;
            numerics.t_end = Some(4.0 * 2.0 * PI / f);
            let mut potential = potential;
            potential.modulation = Some(crate::coupling::PotentialModulation {
                depth: 0.85,
                omega: f,
                phase: 0.0,
            });
            RunConfig {
                graph: line,
                potential,
                drive: DriveConfig {
                    omega: None,
                    arms: vec![
                        FieldLaw::Constant { strength: -f },
                        FieldLaw::Constant { strength: f },
                    ],
                },
                packet: line_packet,
                numerics,
                analysis: AnalysisConfig::None,
                output: OutputConfig::default(),
                scenario: name.into(),
                assumptions: vec![
                    line_note,
                    "modulation frequency ω = d·f with phase 0".into(),
                ],
            }
        }
        "fig3" => {
            let f = PI / 10.0;
            numerics.t_end = Some(2.0 * PI / 0.2);
            numerics.sample_dt = Some(2.0 * PI / 0.2 / 200.0);
            RunConfig {
                graph: line,
                potential,
                drive: DriveConfig {
                    omega: Some(0.2),
                    arms: vec![
                        FieldLaw::Sinusoidal {
                            strength: -f,
                            phase: 0.0,
                        },
                        FieldLaw::Sinusoidal {
                            strength: f,
                            phase: 0.0,
                        },
                    ],
                },
                packet: line_packet,
                numerics,
                analysis: AnalysisConfig::Width {
                    source: WidthSource::Band,
                },
                output: OutputConfig::default(),
                scenario: name.into(),
                assumptions: vec![line_note],
            }
        }
        "fig4" | "fig6" | "fig7" => {
            numerics.t_end = Some(94.25);
            let phase2 = if name == "fig6" { PI / 2.0 } else { 0.0 };
            RunConfig {
                graph: star,
                potential,
                drive: star_drive(phase2),
                packet: star_packet,
                numerics,
                analysis: if name == "fig7" {
                    AnalysisConfig::Sweep {
                        points: 33,
                        arm: 2,
                        target: 3,
                    }
                } else {
                    AnalysisConfig::None
                },
                output: OutputConfig::default(),
                scenario: name.into(),
                assumptions: star_notes,
            }
        }
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    };
    Ok(config)
}

// ---------------------------------------------------------------------------
// Loading

/// Recursively overlays `patch` onto `base`; objects merge, everything else replaces.
pub fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_json(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Parses config JSON text, expanding `preset` (or `preset_override`) and
/// unwrapping run manifests.
pub fn parse_config(text: &str, preset_override: Option<&str>) -> Result<RunConfig, ConfigError> {
    let mut value: Value = if text.trim().is_empty() {
        Value::Object(Default::default())
    } else {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?
    };
    // A manifest carries its fully expanded config.
    if value.get("manifest_version").is_some() {
        value = value.get("config").cloned().unwrap_or(Value::Null);
    }
    let Value::Object(mut map) = value else {
        return Err(ConfigError::Schema {
            path: ".".into(),
            message: "expected a JSON object".into(),
        });
    };
    let preset_name = match (preset_override, map.remove("preset")) {
        (Some(p), _) => Some(p.to_string()),
        (None, Some(Value::String(p))) => Some(p),
        (None, Some(other)) => {
            return Err(ConfigError::Schema {
                path: "preset".into(),
                message: format!("expected a string, got {other}"),
            })
        }
        (None, None) => None,
    };
    let mut merged = match &preset_name {
        Some(p) => serde_json::to_value(preset(p)?).expect("presets serialize"),
        None => Value::Object(Default::default()),
    };
    merge_json(&mut merged, Value::Object(map));
    let config: RunConfig =
        serde_path_to_error::deserialize(merged).map_err(|e| ConfigError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    config.resolved()
}

pub fn load_config(path: &Path, preset_override: Option<&str>) -> Result<RunConfig, Error> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse_config(&text, preset_override)?)
}

// ---------------------------------------------------------------------------
// Manifest

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub config: RunConfig,
    pub modes: usize,
    pub verification: Option<VerificationDigest>,
    pub oracle_corrections: usize,
    pub projection_loss: Option<f64>,
    pub final_norm_defect: Option<f64>,
    pub max_norm_defect: Option<f64>,
    pub wall_clock_seconds: f64,
    /// Scalar results of the run (partial norms, Bloch period, ...).
    pub summary: BTreeMap<String, Value>,
    /// SHA-256 of every output file, keyed by file name.
    pub outputs: BTreeMap<String, String>,
}

// ---------------------------------------------------------------------------
// Pipeline

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Spectrum,
    Verify,
    Evolve,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Verify => "verify",
            Command::Evolve => "evolve",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub strict_oracle: bool,
}

/// Writes CSV files into a directory and records their checksums.
struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, Error> {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    fn write<F>(&mut self, name: &str, body: F) -> Result<(), Error>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        let io = |source| Error::Io {
            path: path.clone(),
            source,
        };
        let mut buf = Vec::new();
        body(&mut buf).map_err(io)?;
        let file = fs::File::create(&path).map_err(io)?;
        let mut w = BufWriter::new(file);
        w.write_all(&buf).map_err(io)?;
        w.flush().map_err(io)?;
        self.files
            .insert(name.to_string(), hex(&Sha256::digest(&buf)));
        Ok(())
    }

    fn finish(self, mut manifest: RunManifest) -> Result<RunManifest, Error> {
        manifest.outputs = self.files;
        let path = self.dir.join("manifest.json");
        let tmp = self.dir.join(".manifest.json.tmp");
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |source| Error::Io { path: p, source }
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&tmp, text + "\n").map_err(io(&tmp))?;
        fs::rename(&tmp, &path).map_err(io(&path))?;
        Ok(manifest)
    }
}

/// Shortest round-trip float text, in exponent form outside `[1e-4, 1e15)`.
struct F(f64);

impl std::fmt::Display for F {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let a = self.0.abs();
        if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
            write!(f, "{:e}", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything a run builds before time stepping.
pub struct Prepared {
    pub basis: SpectralBasis,
    pub couplings: CouplingSet,
    pub verification: Option<VerificationDigest>,
    pub oracle_corrections: usize,
}

/// Spectrum and couplings, verified per `mode`.
pub fn prepare(
    config: &RunConfig,
    mode: VerifyMode,
    options: RunOptions,
) -> Result<Prepared, Error> {
    let k_max = config.numerics.k_max.expect("resolved config");
    let basis = SpectralBasis::new(config.graph.clone(), k_max)?;
    log::info!("spectrum: {} modes below k_max={k_max}", basis.len());
    let mut couplings = CouplingSet::assemble(&basis, &config.potential)?;
    let (report, digest) = verify(&basis, &couplings, mode)?;
    if let Some(err) = report.first_mismatch() {
        if options.strict_oracle {
            return Err(err.into());
        }
    }
    let corrections = apply_oracle_corrections(&mut couplings, &report);
    Ok(Prepared {
        basis,
        couplings,
        verification: (mode != VerifyMode::None).then_some(digest),
        oracle_corrections: corrections,
    })
}

fn manifest(config: &RunConfig, command: Command, prepared: Option<&Prepared>) -> RunManifest {
    RunManifest {
        manifest_version: MANIFEST_VERSION,
        tool: "starwave".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: command.name().into(),
        config: config.clone(),
        modes: prepared.map_or(0, |p| p.basis.len()),
        verification: prepared.and_then(|p| p.verification.clone()),
        oracle_corrections: prepared.map_or(0, |p| p.oracle_corrections),
        projection_loss: None,
        final_norm_defect: None,
        max_norm_defect: None,
        wall_clock_seconds: 0.0,
        summary: BTreeMap::new(),
        outputs: BTreeMap::new(),
    }
}

/// Runs `command` and writes its outputs and manifest into `out`.
pub fn run(
    config: &RunConfig,
    command: Command,
    out: &Path,
    options: RunOptions,
) -> Result<RunManifest, Error> {
    let started = Instant::now();
    let mut outputs = Outputs::new(out)?;
    let mut m = match command {
        Command::Spectrum => {
            let k_max = config.numerics.k_max.expect("resolved config");
            let basis = SpectralBasis::new(config.graph.clone(), k_max)?;
            write_spectrum(&mut outputs, &basis)?;
            let mut m = manifest(config, command, None);
            m.modes = basis.len();
            m
        }
        Command::Verify => {
            let k_max = config.numerics.k_max.expect("resolved config");
            let basis = SpectralBasis::new(config.graph.clone(), k_max)?;
            write_spectrum(&mut outputs, &basis)?;
            let couplings = CouplingSet::assemble(&basis, &config.potential)?;
            let (report, digest) = verify(&basis, &couplings, VerifyMode::Full)?;
            if options.strict_oracle {
                if let Some(err) = report.first_mismatch() {
                    return Err(err.into());
                }
            }
            outputs.write("coupling_verification.csv", |w| {
                writeln!(w, "matrix,arm,n,m,analytic,quadrature,rel_err")?;
                for e in &report.entries {
                    let arm = e.arm.map_or(String::new(), |a| (a + 1).to_string());
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{}",
                        e.kind.label(),
                        arm,
                        e.n + 1,
                        e.m + 1,
                        F(e.analytic),
                        F(e.quadrature),
                        F(e.rel_err)
                    )?;
                }
                Ok(())
            })?;
            let modes = default_audit_modes(basis.len());
            let rows = formula_audit(&basis, config.potential.lattice_wavenumber(), &modes)
                .map_err(crate::coupling::CouplingError::from)?;
            outputs.write("formula_audit.csv", |w| {
                writeln!(
                    w,
                    "quantity,arm,n,m,printed,implemented,oracle,printed_error,implemented_error"
                )?;
                for r in &rows {
                    let arm = r.arm.map_or(String::new(), |a| (a + 1).to_string());
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{},{}",
                        r.quantity.label(),
                        arm,
                        r.n + 1,
                        r.m + 1,
                        F(r.printed),
                        F(r.implemented),
                        F(r.oracle),
                        F(r.printed_error()),
                        F(r.implemented_error())
                    )?;
                }
                Ok(())
            })?;
            let mut m = manifest(config, command, None);
            m.modes = basis.len();
            m.summary
                .insert("mismatches".into(), serde_json::json!(digest.mismatches));
            m.verification = Some(digest);
            m
        }
        Command::Evolve => evolve_command(config, &mut outputs, options)?,
        Command::Sweep => sweep_command(config, &mut outputs, options)?,
    };
    m.wall_clock_seconds = started.elapsed().as_secs_f64();
    outputs.finish(m)
}

fn write_spectrum(outputs: &mut Outputs, basis: &SpectralBasis) -> Result<(), Error> {
    outputs.write("spectrum.csv", |w| {
        writeln!(w, "n,k,B,secular_residual")?;
        for n in 0..basis.len() {
            writeln!(
                w,
                "{},{},{},{}",
                n + 1,
                F(basis.wavenumbers()[n]),
                F(basis.normalizations()[n]),
                F(basis.secular_residuals()[n])
            )?;
        }
        Ok(())
    })
}

/// Line coordinate sign of each arm: the packet arm points forward.
fn line_signs(arms: usize, packet_arm: usize) -> Vec<f64> {
    (0..arms)
        .map(|j| if j == packet_arm { 1.0 } else { -1.0 })
        .collect()
}

struct Record {
    times: Vec<f64>,
    norms: Vec<Vec<f64>>,
    centers: Vec<f64>,
    widths: Vec<WidthRow>,
    density: Vec<(f64, Vec<Vec<f64>>)>,
}

struct WidthRow {
    t: f64,
    fit: Option<crate::analysis::WidthFit>,
    predicted: f64,
}

fn evolve_command(
    config: &RunConfig,
    outputs: &mut Outputs,
    options: RunOptions,
) -> Result<RunManifest, Error> {
    let prepared = prepare(config, config.numerics.verify, options)?;
    let basis = &prepared.basis;
    let couplings = &prepared.couplings;
    write_spectrum(outputs, basis)?;
    let drive = config.drive_spec();
    let packet = config.packet();
    let projection = init_gaussian(basis, &packet)?;
    let frame = Frame::new(config.numerics.frame, basis, couplings, &drive)?;
    let propagator = Propagator::new(&frame, &drive)?;
    let grid = DensityGrid::new(basis, config.numerics.grid_points_per_wavelength)?;
    let arms = basis.graph().arm_count();
    let signs = line_signs(arms, packet.arm);
    let needs_band = matches!(
        config.analysis,
        AnalysisConfig::Bloch {
            center: CenterMethod::Band
        } | AnalysisConfig::Width {
            source: WidthSource::Band
        }
    );
    let band = if needs_band {
        Some(BandProjector::new(basis, couplings, config.potential.v0)?)
    } else {
        None
    };
    let every = config.output.density_every.expect("resolved config");
    let width_law = match drive.arms[packet.arm] {
        FieldLaw::Sinusoidal { strength, phase } => drive.omega.map(|w| (strength.abs(), w, phase)),
        FieldLaw::Constant { .. } => None,
    };

    let mut record = Record {
        times: vec![],
        norms: vec![],
        centers: vec![],
        widths: vec![],
        density: vec![],
    };
    let mut analysis_error: Option<Error> = None;
    let mut index = 0usize;
    let observer = |s: &WaveState| {
        record.times.push(s.t);
        record.norms.push(partial_norms(s, couplings));
        match config.analysis {
            AnalysisConfig::Bloch { center } => {
                let (state, weight) = match (&band, center) {
                    (Some(b), CenterMethod::Band) => {
                        let p = b.project(s);
                        let w = p.norm_sqr();
                        (p, w)
                    }
                    _ => (s.clone(), s.norm_sqr()),
                };
                let m = arm_moments(&state, couplings);
                record
                    .centers
                    .push(m.iter().zip(&signs).map(|(x, s)| x * s).sum::<f64>() / weight);
            }
            AnalysisConfig::Width { source } => {
                let projected;
                let state = match (&band, source) {
                    (Some(b), WidthSource::Band) => {
                        projected = b.project(s);
                        &projected
                    }
                    _ => s,
                };
                let profile = grid
                    .wavefunction(packet.arm, state)
                    .iter()
                    .map(|z| z.norm_sqr())
                    .collect::<Vec<_>>();
                let opts = FitOptions {
                    smoothing_period: Some(config.potential.period),
                    initial_sigma: Some(packet.sigma),
                };
                let fit = match fit_gaussian_width(grid.xs(packet.arm), &profile, opts) {
                    Ok(fit) => Some(fit),
                    Err(e) => {
                        log::warn!("width fit at t={}: {e}", s.t);
                        None
                    }
                };
                let predicted = width_law.map_or(f64::NAN, |(f, w, phi)| {
                    predicted_width(s.t, f, w, phi, packet.sigma)
                });
                record.widths.push(WidthRow {
                    t: s.t,
                    fit,
                    predicted,
                });
            }
            _ => {}
        }
        if config.output.write_density && index % every == 0 {
            record.density.push((s.t, grid.density(s)));
        }
        index += 1;
    };
    let t_end = config.numerics.t_end.expect("resolved config");
    let dt = config.numerics.sample_dt.expect("resolved config");
    let (_, stats) =
        propagator.evolve(&projection.state, t_end, dt, &config.tolerances(), observer)?;
    log::info!(
        "evolve: {} steps ({} rejected), final norm defect {:e}",
        stats.accepted_steps,
        stats.rejected_steps,
        stats.final_norm_defect
    );

    outputs.write("norms.csv", |w| {
        write!(w, "t")?;
        for j in 1..=arms {
            write!(w, ",P_{j}")?;
        }
        writeln!(w, ",total")?;
        for (t, p) in record.times.iter().zip(&record.norms) {
            write!(w, "{}", F(*t))?;
            for v in p {
                write!(w, ",{}", F(*v))?;
            }
            writeln!(w, ",{}", F(p.iter().sum::<f64>()))?;
        }
        Ok(())
    })?;
    if config.output.write_density {
        let stride = config.output.density_stride;
        for arm in 0..arms {
            outputs.write(&format!("density_arm{}.csv", arm + 1), |w| {
                writeln!(w, "t,x,density")?;
                for (t, d) in &record.density {
                    for (i, (x, v)) in grid.xs(arm).iter().zip(&d[arm]).enumerate() {
                        if i % stride == 0 {
                            writeln!(w, "{},{},{}", F(*t), F(*x), F(*v))?;
                        }
                    }
                }
                Ok(())
            })?;
        }
    }

    let mut m = manifest(config, Command::Evolve, Some(&prepared));
    m.projection_loss = Some(projection.projection_loss);
    m.final_norm_defect = Some(stats.final_norm_defect);
    m.max_norm_defect = Some(stats.max_norm_defect);
    let finals = record.norms.last().cloned().unwrap_or_default();
    m.summary
        .insert("final_partial_norms".into(), serde_json::json!(finals));
    let saturated: Vec<Option<f64>> = (0..arms)
        .map(|j| {
            saturation_level(
                &record.norms.iter().map(|p| p[j]).collect::<Vec<_>>(),
                0.1,
                0.02,
            )
        })
        .collect();
    m.summary.insert(
        "saturated_partial_norms".into(),
        serde_json::json!(saturated),
    );
    m.summary.insert(
        "accepted_steps".into(),
        serde_json::json!(stats.accepted_steps),
    );

    match config.analysis {
        AnalysisConfig::Bloch { .. } => {
            write_centers(outputs, &record)?;
            let f = drive.reference_strength();
            match bloch_observables(dt, &record.centers, f, config.potential.period) {
                Ok(obs) => {
                    write_bloch(outputs, &obs)?;
                    m.summary.insert(
                        "bloch".into(),
                        serde_json::to_value(obs).expect("serializable"),
                    );
                }
                Err(e) => analysis_error = Some(e.into()),
            }
        }
        AnalysisConfig::Width { .. } => {
            outputs.write("width.csv", |w| {
                writeln!(w, "t,center,sigma_fit,sigma_predicted,residual")?;
                for r in &record.widths {
                    match r.fit {
                        Some(fit) => writeln!(
                            w,
                            "{},{},{},{},{}",
                            F(r.t),
                            F(fit.center),
                            F(fit.sigma),
                            F(r.predicted),
                            F(fit.residual)
                        )?,
                        None => writeln!(w, "{},NaN,NaN,{},NaN", F(r.t), F(r.predicted))?,
                    }
                }
                Ok(())
            })?;
            let fitted: Vec<f64> = record
                .widths
                .iter()
                .filter_map(|r| r.fit.map(|f| f.sigma))
                .collect();
            let failed = record.widths.len() - fitted.len();
            let dev = fitted
                .iter()
                .map(|s| (s / packet.sigma - 1.0).abs())
                .fold(0.0, f64::max);
            m.summary.insert(
                "width_max_relative_deviation".into(),
                serde_json::json!(dev),
            );
            m.summary
                .insert("width_failed_fits".into(), serde_json::json!(failed));
        }
        _ => {}
    }
    if let Some(e) = analysis_error {
        return Err(e);
    }
    Ok(m)
}

fn write_centers(outputs: &mut Outputs, record: &Record) -> Result<(), Error> {
    outputs.write("center.csv", |w| {
        writeln!(w, "t,center")?;
        for (t, c) in record.times.iter().zip(&record.centers) {
            writeln!(w, "{},{}", F(*t), F(*c))?;
        }
        Ok(())
    })
}

fn write_bloch(outputs: &mut Outputs, obs: &BlochObservables) -> Result<(), Error> {
    outputs.write("bloch.csv", |w| {
        writeln!(w, "T_B_measured,Lambda,Delta")?;
        writeln!(
            w,
            "{},{},{}",
            F(obs.period),
            F(obs.amplitude),
            F(obs.bandwidth)
        )
    })
}

/// Runs the configured phase sweep and returns it with the shared inputs.
pub fn run_sweep(config: &RunConfig, prepared: &Prepared) -> Result<SweepResult, Error> {
    let AnalysisConfig::Sweep {
        points,
        arm,
        target,
    } = config.analysis
    else {
        return Err(ConfigError::Invalid("sweep needs analysis.kind = \"sweep\"".into()).into());
    };
    let drive = config.drive_spec();
    let projection = init_gaussian(&prepared.basis, &config.packet())?;
    let frame = Frame::new(
        config.numerics.frame,
        &prepared.basis,
        &prepared.couplings,
        &drive,
    )?;
    let setup = SweepSetup {
        couplings: &prepared.couplings,
        frame: &frame,
        drive,
        initial: projection.state,
        tolerances: config.tolerances(),
        swept_arm: arm - 1,
        target_arm: target - 1,
    };
    let t_end = config.numerics.t_end.expect("resolved config");
    Ok(phase_sweep(&setup, &phase_grid(points), t_end)?)
}

fn sweep_command(
    config: &RunConfig,
    outputs: &mut Outputs,
    options: RunOptions,
) -> Result<RunManifest, Error> {
    let prepared = prepare(config, config.numerics.verify, options)?;
    let result = run_sweep(config, &prepared)?;
    let arms = prepared.basis.graph().arm_count();
    outputs.write("sweep.csv", |w| {
        write!(w, "phi{}", result.swept_arm + 1)?;
        for j in 1..=arms {
            write!(w, ",P_{j}")?;
        }
        writeln!(w)?;
        for p in &result.points {
            write!(w, "{}", F(p.phase))?;
            match &p.partial_norms {
                Ok(norms) => {
                    for v in norms {
                        write!(w, ",{}", F(*v))?;
                    }
                }
                Err(_) => {
                    for _ in 0..arms {
                        write!(w, ",NaN")?;
                    }
                }
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    let mut m = manifest(config, Command::Sweep, Some(&prepared));
    let failures: Vec<_> = result
        .points
        .iter()
        .filter_map(|p| {
            p.partial_norms
                .as_ref()
                .err()
                .map(|e| serde_json::json!({"phase": p.phase, "error": e}))
        })
        .collect();
    for f in &failures {
        log::error!("sweep point failed: {f}");
    }
    let best = result.argmax();
    m.summary.insert(
        "argmax_phase".into(),
        serde_json::json!(best.map(|i| result.points[i].phase)),
    );
    m.summary.insert(
        "argmax_separation".into(),
        serde_json::json!(best.and_then(|i| result.separation(i))),
    );
    m.summary
        .insert("failed_points".into(), Value::Array(failures));
    let worst = result
        .points
        .iter()
        .filter_map(|p| p.final_norm_defect)
        .fold(0.0, f64::max);
    m.max_norm_defect = Some(worst);
    Ok(m)
}

//! Galerkin coupling matrices in the star-graph eigenbasis.
//!
//! With `u = L_j - x` every matrix element reduces to
//! `β_{jn} β_{jm} ∫_0^L w(L-u) sin(k_n u) sin(k_m u) du`, `β_{jn} = B_n / sin(k_n L_j)`.
//! Product-to-sum gives closed forms in the single helper
//! `h(c) = sin(cL/2) / c`, which is evaluated by its Taylor series once
//! `|c|` drops below [`DENOMINATOR_THRESHOLD`]:
//!
//! * overlap `G_j`:   `½[S(k_n-k_m) - S(k_n+k_m)]`, `S(c) = 2 cos(cL/2) h(c)`
//! * position `X_j`:  `½[R(k_n-k_m) - R(k_n+k_m)]`, `R(c) = 2 h(c)²`
//! * cosine `cos(ω_d x)`: `¼[T(δ) + T(-δ) - T(σ) - T(-σ)]` with
//!   `T(c) = 2 cos((ω_d - c)L/2) h(ω_d + c)`, `δ = k_n - k_m`, `σ = k_n + k_m`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::quadrature::{GaussLegendre, QuadratureError};
use crate::spectrum::{arm_nodes, SpectralBasis};

/// Below this magnitude a denominator `ω_d ± k_n ± k_m` is replaced by its
/// analytic limit.
pub const DENOMINATOR_THRESHOLD: f64 = 1e-8;
/// Relative agreement required between closed form and quadrature.
pub const ORACLE_REL_TOL: f64 = 1e-8;
/// Entries with `|quadrature| <` this are compared in absolute terms, which
/// makes the absolute floor `ORACLE_REL_TOL * NEAR_ZERO = 1e-10`.
pub const NEAR_ZERO: f64 = 1e-2;
/// Convergence target of the quadrature oracle between panel doublings.
pub const ORACLE_REFINE_TOL: f64 = 1e-12;
/// Gauss–Legendre nodes per oracle panel; one panel spans one wavelength.
const ORACLE_NODES: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("lattice period must be positive, got {0}")]
    BadPeriod(f64),
    #[error("modulation depth must lie in [0, 1], got {0}")]
    BadDepth(f64),
    #[error("modulation frequency must be positive, got {0}")]
    BadModulationFrequency(f64),
    #[error(
        "{kind} entry ({n},{m}){arm} disagrees with quadrature: analytic {analytic:e}, quadrature {quadrature:e}",
        arm = .arm.map(|a| format!(" arm {}", a + 1)).unwrap_or_default()
    )]
    OracleMismatch {
        kind: MatrixKind,
        arm: Option<usize>,
        n: usize,
        m: usize,
        analytic: f64,
        quadrature: f64,
    },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Sinusoidal modulation of the lattice amplitude,
/// `V0 [1 - depth sin(omega t + phase)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialModulation {
    pub depth: f64,
    pub omega: f64,
    #[serde(default)]
    pub phase: f64,
}

/// `V(x, t) = V0 m(t) cos(2π x / d) + offset` on every arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticePotentialSpec {
    pub v0: f64,
    pub period: f64,
    #[serde(default)]
    pub modulation: Option<PotentialModulation>,
    /// Spatially uniform energy shift; only changes a global phase.
    #[serde(default)]
    pub offset: f64,
}

impl LatticePotentialSpec {
    pub fn new(v0: f64, period: f64) -> Result<Self, CouplingError> {
        let spec = Self {
            v0,
            period,
            modulation: None,
            offset: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CouplingError> {
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(CouplingError::BadPeriod(self.period));
        }
        if let Some(m) = self.modulation {
            if !(0.0..=1.0).contains(&m.depth) {
                return Err(CouplingError::BadDepth(m.depth));
            }
            if !(m.omega.is_finite() && m.omega > 0.0) {
                return Err(CouplingError::BadModulationFrequency(m.omega));
            }
        }
        Ok(())
    }

    /// `ω_d = 2π / d`.
    pub fn lattice_wavenumber(&self) -> f64 {
        2.0 * PI / self.period
    }

    /// Time-dependent amplitude `V0_eff(t)`.
    pub fn amplitude(&self, t: f64) -> f64 {
        match self.modulation {
            None => self.v0,
            Some(m) => self.v0 * (1.0 - m.depth * (m.omega * t + m.phase).sin()),
        }
    }
}

/// `h(c) = sin(cL/2)/c`, with the Taylor branch near `c = 0`.
#[inline]
pub fn half_sinc(c: f64, length: f64) -> f64 {
    let a = 0.5 * length;
    if c.abs() < DENOMINATOR_THRESHOLD {
        let ca = c * a;
        a * (1.0 - ca * ca / 6.0)
    } else {
        (c * a).sin() / c
    }
}

/// `∫_0^L sin(a u) sin(b u) du`.
pub fn overlap_integral(a: f64, b: f64, length: f64) -> f64 {
    let s = |c: f64| 2.0 * (0.5 * c * length).cos() * half_sinc(c, length);
    0.5 * (s(a - b) - s(a + b))
}

/// `∫_0^L (L - u) sin(a u) sin(b u) du`, i.e. the position weight `x`.
pub fn position_integral(a: f64, b: f64, length: f64) -> f64 {
    let r = |c: f64| {
        let h = half_sinc(c, length);
        2.0 * h * h
    };
    0.5 * (r(a - b) - r(a + b))
}

/// `∫_0^L cos(ω (L - u)) sin(a u) sin(b u) du`.
pub fn cosine_integral(a: f64, b: f64, length: f64, omega: f64) -> f64 {
    let t = |c: f64| 2.0 * (0.5 * (omega - c) * length).cos() * half_sinc(omega + c, length);
    let (d, s) = (a - b, a + b);
    0.25 * (t(d) + t(-d) - t(s) - t(-s))
}

/// Which coupling matrix an entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    /// Unit-amplitude cosine overlap, summed over arms.
    CosineUnit,
    Position,
    Overlap,
}

impl MatrixKind {
    pub fn label(self) -> &'static str {
        match self {
            MatrixKind::CosineUnit => "IV_unit",
            MatrixKind::Position => "X",
            MatrixKind::Overlap => "G",
        }
    }
}

impl std::fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Builds a symmetric matrix from its upper triangle.
fn symmetric_from<F>(n: usize, entry: F) -> DMatrix<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|m| (0..=m).map(|i| entry(i, m)).collect())
        .collect();
    let mut out = DMatrix::zeros(n, n);
    for (m, col) in columns.into_iter().enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            out[(i, m)] = v;
            out[(m, i)] = v;
        }
    }
    out
}

/// Unit-amplitude cosine matrix `Σ_j ∫ ψ_{j,m} cos(ω_d x) ψ_{j,n} dx`.
pub fn assemble_iv_unit(basis: &SpectralBasis, lattice_wavenumber: f64) -> DMatrix<f64> {
    let k = basis.wavenumbers();
    let lengths = basis.graph().arm_lengths();
    symmetric_from(basis.len(), |n, m| {
        lengths
            .iter()
            .enumerate()
            .map(|(arm, &l)| {
                basis.amplitude(n, arm)
                    * basis.amplitude(m, arm)
                    * cosine_integral(k[n], k[m], l, lattice_wavenumber)
            })
            .sum()
    })
}

/// Per-arm position matrices `(X_j)_{nm} = ∫_0^{L_j} ψ_{j,m} x ψ_{j,n} dx`.
pub fn assemble_position(basis: &SpectralBasis) -> Vec<DMatrix<f64>> {
    per_arm(basis, position_integral)
}

/// Per-arm overlap matrices `(G_j)_{nm} = ∫_0^{L_j} ψ_{j,m} ψ_{j,n} dx`.
pub fn assemble_overlaps(basis: &SpectralBasis) -> Vec<DMatrix<f64>> {
    per_arm(basis, overlap_integral)
}

fn per_arm(basis: &SpectralBasis, integral: fn(f64, f64, f64) -> f64) -> Vec<DMatrix<f64>> {
    let k = basis.wavenumbers();
    (0..basis.graph().arm_count())
        .map(|arm| {
            let l = basis.graph().arm_length(arm);
            symmetric_from(basis.len(), |n, m| {
                basis.amplitude(n, arm) * basis.amplitude(m, arm) * integral(k[n], k[m], l)
            })
        })
        .collect()
}

/// Every matrix the propagator and the observables need.
#[derive(Debug, Clone)]
pub struct CouplingSet {
    pub lattice_wavenumber: f64,
    pub iv_unit: DMatrix<f64>,
    pub position: Vec<DMatrix<f64>>,
    pub overlap: Vec<DMatrix<f64>>,
}

impl CouplingSet {
    pub fn assemble(
        basis: &SpectralBasis,
        potential: &LatticePotentialSpec,
    ) -> Result<Self, CouplingError> {
        potential.validate()?;
        let lattice_wavenumber = potential.lattice_wavenumber();
        Ok(Self {
            lattice_wavenumber,
            iv_unit: assemble_iv_unit(basis, lattice_wavenumber),
            position: assemble_position(basis),
            overlap: assemble_overlaps(basis),
        })
    }

    pub fn dim(&self) -> usize {
        self.iv_unit.nrows()
    }

    pub fn arm_count(&self) -> usize {
        self.position.len()
    }

    pub fn matrix(&self, kind: MatrixKind, arm: Option<usize>) -> &DMatrix<f64> {
        match (kind, arm) {
            (MatrixKind::CosineUnit, _) => &self.iv_unit,
            (MatrixKind::Position, Some(j)) => &self.position[j],
            (MatrixKind::Overlap, Some(j)) => &self.overlap[j],
            (_, None) => panic!("per-arm matrix requested without an arm"),
        }
    }

    fn matrix_mut(&mut self, kind: MatrixKind, arm: Option<usize>) -> &mut DMatrix<f64> {
        match (kind, arm) {
            (MatrixKind::CosineUnit, _) => &mut self.iv_unit,
            (MatrixKind::Position, Some(j)) => &mut self.position[j],
            (MatrixKind::Overlap, Some(j)) => &mut self.overlap[j],
            (_, None) => panic!("per-arm matrix requested without an arm"),
        }
    }

    /// `(kind, arm)` pairs in a fixed order.
    pub fn labels(&self) -> Vec<(MatrixKind, Option<usize>)> {
        let mut out = vec![(MatrixKind::CosineUnit, None)];
        out.extend((0..self.arm_count()).map(|j| (MatrixKind::Position, Some(j))));
        out.extend((0..self.arm_count()).map(|j| (MatrixKind::Overlap, Some(j))));
        out
    }

    /// SHA-256 over every matrix, little-endian, in [`Self::labels`] order.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (kind, arm) in self.labels() {
            for v in self.matrix(kind, arm).iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        format!("{:x}", hasher.finalize())
    }

    /// `max |Σ_j G_j - I|`.
    pub fn completeness_defect(&self) -> f64 {
        let n = self.dim();
        let mut sum = DMatrix::<f64>::identity(n, n) * -1.0;
        for g in &self.overlap {
            sum += g;
        }
        sum.amax()
    }

    /// Largest `|M - Mᵀ|` over all matrices.
    pub fn symmetry_defect(&self) -> f64 {
        self.labels()
            .into_iter()
            .map(|(kind, arm)| {
                let m = self.matrix(kind, arm);
                (m - m.transpose()).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// Weight function of a quadrature-oracle integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weight {
    Unit,
    Position,
    Cosine(f64),
}

impl Weight {
    #[inline]
    fn eval(self, x: f64) -> f64 {
        match self {
            Weight::Unit => 1.0,
            Weight::Position => x,
            Weight::Cosine(w) => (w * x).cos(),
        }
    }

    fn max_abs(self, length: f64) -> f64 {
        match self {
            Weight::Position => length,
            _ => 1.0,
        }
    }

    fn wavenumber(self) -> f64 {
        match self {
            Weight::Cosine(w) => w.abs(),
            _ => 0.0,
        }
    }
}

/// `∫_0^{L_j} ψ_{j,m}(x) w(x) ψ_{j,n}(x) dx` by composite Gauss–Legendre
/// with one 16-node panel per wavelength of `max(k_n, k_m, ω_d)`, doubled
/// until successive estimates agree to 1e-12 relative.
pub fn quadrature_oracle(
    basis: &SpectralBasis,
    weight: Weight,
    arm: usize,
    n: usize,
    m: usize,
) -> Result<f64, QuadratureError> {
    let k = basis.wavenumbers();
    let l = basis.graph().arm_length(arm);
    let kappa = k[n].max(k[m]).max(weight.wavenumber());
    let panels = (l * kappa / (2.0 * PI)).ceil().max(1.0) as usize;
    let scale =
        weight.max_abs(l) * (basis.amplitude(n, arm) * basis.amplitude(m, arm)).abs() * 0.5 * l;
    let rule = GaussLegendre::new(ORACLE_NODES);
    rule.integrate_adaptive(
        |x| basis.eval(m, arm, x) * weight.eval(x) * basis.eval(n, arm, x),
        0.0,
        l,
        panels,
        ORACLE_REFINE_TOL,
        scale,
    )
}

/// All three weighted Gram matrices of one arm by quadrature, refined as a
/// whole: the panel count doubles until no entry moves by more than
/// `1e-12 · max(|entry|, max|matrix|)`. Returns `[cosine, position, overlap]`.
pub fn oracle_arm_matrices(
    basis: &SpectralBasis,
    arm: usize,
    lattice_wavenumber: f64,
) -> Result<[DMatrix<f64>; 3], QuadratureError> {
    let l = basis.graph().arm_length(arm);
    let kappa = basis.k_max().max(lattice_wavenumber);
    let rule = GaussLegendre::new(ORACLE_NODES);
    let weights = [
        Weight::Cosine(lattice_wavenumber),
        Weight::Position,
        Weight::Unit,
    ];
    let mut ppw = ORACLE_NODES as f64;
    let mut prev: Option<[DMatrix<f64>; 3]> = None;
    let mut change = f64::INFINITY;
    for _ in 0..=crate::quadrature::MAX_REFINEMENT_LEVELS {
        let (xs, ws) = arm_nodes(&rule, l, kappa, ppw);
        let phi = basis.sample_arm(arm, &xs);
        let next = weights.map(|w| {
            let mut scaled = phi.clone();
            for ((mut row, &x), &q) in scaled.row_iter_mut().zip(&xs).zip(&ws) {
                row *= q * w.eval(x);
            }
            phi.tr_mul(&scaled)
        });
        if let Some(prev) = &prev {
            change = 0.0;
            let mut converged = true;
            for (a, b) in prev.iter().zip(&next) {
                let scale = b.amax();
                for (x, y) in a.iter().zip(b.iter()) {
                    let d = (x - y).abs();
                    change = f64::max(change, d);
                    if d > ORACLE_REFINE_TOL * y.abs().max(scale) {
                        converged = false;
                    }
                }
            }
            if converged {
                return Ok(next);
            }
        }
        prev = Some(next);
        ppw *= 2.0;
    }
    Err(QuadratureError::NoConvergence {
        levels: crate::quadrature::MAX_REFINEMENT_LEVELS,
        last_change: change,
    })
}

/// Scaled error used for every oracle comparison; an entry passes when it
/// is at most [`ORACLE_REL_TOL`].
pub fn scaled_error(analytic: f64, quadrature: f64) -> f64 {
    (analytic - quadrature).abs() / quadrature.abs().max(NEAR_ZERO)
}

/// One compared entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationEntry {
    pub kind: MatrixKind,
    pub arm: Option<usize>,
    pub n: usize,
    pub m: usize,
    pub analytic: f64,
    pub quadrature: f64,
    pub rel_err: f64,
}

impl VerificationEntry {
    pub fn passes(&self) -> bool {
        self.rel_err <= ORACLE_REL_TOL
    }
}

/// How much of the coupling set to check against quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VerifyMode {
    None,
    /// A fixed, deterministic subset of entries per matrix.
    #[default]
    Sample,
    /// Every upper-triangle entry.
    Full,
}

/// Result of an oracle pass.
#[derive(Debug, Clone, Default)]
pub struct VerificationReport {
    pub entries: Vec<VerificationEntry>,
}

/// Compact, serializable summary stored in run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationDigest {
    pub mode: VerifyMode,
    pub matrices_sha256: String,
    pub entries_checked: usize,
    pub mismatches: usize,
    pub max_rel_err: f64,
    pub completeness_defect: f64,
    pub symmetry_defect: f64,
}

impl VerificationReport {
    pub fn mismatches(&self) -> impl Iterator<Item = &VerificationEntry> {
        self.entries.iter().filter(|e| !e.passes())
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn max_rel_err_of(&self, kind: MatrixKind) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| e.rel_err)
            .fold(0.0, f64::max)
    }

    /// First mismatch as an error, for strict runs.
    pub fn first_mismatch(&self) -> Option<CouplingError> {
        self.mismatches()
            .next()
            .map(|e| CouplingError::OracleMismatch {
                kind: e.kind,
                arm: e.arm,
                n: e.n,
                m: e.m,
                analytic: e.analytic,
                quadrature: e.quadrature,
            })
    }
}

/// Compares every upper-triangle entry of every matrix against the batched
/// quadrature oracle. Arms are processed in parallel.
pub fn verify_full(
    basis: &SpectralBasis,
    set: &CouplingSet,
) -> Result<VerificationReport, CouplingError> {
    let arms = basis.graph().arm_count();
    let per_arm: Vec<[DMatrix<f64>; 3]> = (0..arms)
        .into_par_iter()
        .map(|arm| oracle_arm_matrices(basis, arm, set.lattice_wavenumber))
        .collect::<Result<_, _>>()?;
    let n = basis.len();
    let mut iv = DMatrix::<f64>::zeros(n, n);
    for mats in &per_arm {
        iv += &mats[0];
    }
    let mut entries = Vec::new();
    let mut push = |kind, arm, oracle: &DMatrix<f64>| {
        let analytic = set.matrix(kind, arm);
        for m in 0..n {
            for i in 0..=m {
                let (a, q) = (analytic[(i, m)], oracle[(i, m)]);
                entries.push(VerificationEntry {
                    kind,
                    arm,
                    n: i,
                    m,
                    analytic: a,
                    quadrature: q,
                    rel_err: scaled_error(a, q),
                });
            }
        }
    };
    push(MatrixKind::CosineUnit, None, &iv);
    for (arm, mats) in per_arm.iter().enumerate() {
        push(MatrixKind::Position, Some(arm), &mats[1]);
    }
    for (arm, mats) in per_arm.iter().enumerate() {
        push(MatrixKind::Overlap, Some(arm), &mats[2]);
    }
    Ok(VerificationReport { entries })
}

/// Deterministic entry subset: the first and last diagonal entries, nearest
/// neighbours, and a strided spread of off-diagonal pairs.
pub fn sample_pairs(n: usize, count: usize) -> Vec<(usize, usize)> {
    let mut pairs = vec![(0, 0), (n - 1, n - 1)];
    if n > 1 {
        pairs.push((0, 1));
        pairs.push((n - 2, n - 1));
    }
    let stride_a = 7919 % n.max(1);
    let stride_b = 104_729 % n.max(1);
    for i in 0..count {
        let a = (i * stride_a + i / 2) % n;
        let b = (i * stride_b + 3 * i) % n;
        pairs.push((a.min(b), a.max(b)));
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

/// Checks a deterministic sample of entries with the per-entry adaptive
/// oracle.
pub fn verify_sample(
    basis: &SpectralBasis,
    set: &CouplingSet,
    per_matrix: usize,
) -> Result<VerificationReport, CouplingError> {
    let pairs = sample_pairs(basis.len(), per_matrix);
    let arms = basis.graph().arm_count();
    let entries: Vec<VerificationEntry> = set
        .labels()
        .into_par_iter()
        .map(
            |(kind, arm)| -> Result<Vec<VerificationEntry>, CouplingError> {
                let analytic = set.matrix(kind, arm);
                pairs
                    .iter()
                    .map(|&(n, m)| {
                        let q = match kind {
                            MatrixKind::CosineUnit => (0..arms)
                                .map(|j| {
                                    quadrature_oracle(
                                        basis,
                                        Weight::Cosine(set.lattice_wavenumber),
                                        j,
                                        n,
                                        m,
                                    )
                                })
                                .sum::<Result<f64, _>>()?,
                            MatrixKind::Position => {
                                quadrature_oracle(basis, Weight::Position, arm.unwrap(), n, m)?
                            }
                            MatrixKind::Overlap => {
                                quadrature_oracle(basis, Weight::Unit, arm.unwrap(), n, m)?
                            }
                        };
                        let a = analytic[(n, m)];
                        Ok(VerificationEntry {
                            kind,
                            arm,
                            n,
                            m,
                            analytic: a,
                            quadrature: q,
                            rel_err: scaled_error(a, q),
                        })
                    })
                    .collect()
            },
        )
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(VerificationReport { entries })
}

/// Replaces every mismatching analytic entry (and its mirror) by the
/// quadrature value. Returns how many entries were replaced.
pub fn apply_oracle_corrections(set: &mut CouplingSet, report: &VerificationReport) -> usize {
    let mut count = 0;
    for e in report.mismatches() {
        log::warn!(
            "oracle correction: {} arm {:?} ({},{}) analytic {:e} -> quadrature {:e}",
            e.kind,
            e.arm.map(|a| a + 1),
            e.n,
            e.m,
            e.analytic,
            e.quadrature
        );
        let m = set.matrix_mut(e.kind, e.arm);
        m[(e.n, e.m)] = e.quadrature;
        m[(e.m, e.n)] = e.quadrature;
        count += 1;
    }
    count
}

/// Runs the requested oracle pass and summarizes it.
pub fn verify(
    basis: &SpectralBasis,
    set: &CouplingSet,
    mode: VerifyMode,
) -> Result<(VerificationReport, VerificationDigest), CouplingError> {
    let report = match mode {
        VerifyMode::None => VerificationReport::default(),
        VerifyMode::Sample => verify_sample(basis, set, 24)?,
        VerifyMode::Full => verify_full(basis, set)?,
    };
    let digest = VerificationDigest {
        mode,
        matrices_sha256: set.digest(),
        entries_checked: report.entries.len(),
        mismatches: report.mismatches().count(),
        max_rel_err: report.max_rel_err(),
        completeness_defect: set.completeness_defect(),
        symmetry_defect: set.symmetry_defect(),
    };
    Ok((report, digest))
}

//! Galerkin time evolution `i Ċ = [D + M(t)] C` in the star-graph eigenbasis.
//!
//! The integrator works in an interaction picture. A reference diagonal `E`
//! (either `k_n²` or the spectrum of the whole time-independent Hamiltonian)
//! is applied analytically as `e^{-iEτ}`, and the remaining bounded coupling
//! is stepped with the Dormand–Prince 5(4) pair. The picture is re-anchored
//! at the start of every step so phase arguments stay small. The norm is
//! monitored and never rescaled.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::CouplingSet;
use crate::drive::{DriveError, DriveSpec, Operator, StaticPart, TimeLaw};
use crate::kernels::symv_accumulate;
use crate::quadrature::GaussLegendre;
use crate::spectrum::{arm_nodes, SpectralBasis};

/// Largest admissible `1 - Σ|C_n|²` of the initial projection.
pub const MAX_PROJECTION_LOSS: f64 = 1e-4;
/// Packet tails are required to fit inside the arm out to this many σ.
pub const SUPPORT_SIGMAS: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagatorError {
    #[error("projection loss {loss:e} exceeds {tolerance:e}; increase k_max")]
    TruncationTooSmall { loss: f64, tolerance: f64 },
    #[error("packet at x0={center} with σ={sigma} does not fit inside arm {} of length {length}", .arm + 1)]
    SupportViolation {
        arm: usize,
        center: f64,
        sigma: f64,
        length: f64,
    },
    #[error("invalid packet: {0}")]
    BadPacket(String),
    #[error("norm drift {drift:e} at t={t} exceeds {tolerance:e}")]
    NormDriftExceeded { t: f64, drift: f64, tolerance: f64 },
    #[error("step size {step:e} below minimum at t={t}")]
    StepUnderflow { t: f64, step: f64 },
    #[error("frame does not fit this drive: {0}")]
    FrameMismatch(String),
    #[error("t_end={t_end} must exceed the state time {t_start}")]
    BadInterval { t_start: f64, t_end: f64 },
    #[error("density grid needs at least 8 points per wavelength, got {0}")]
    GridTooCoarse(f64),
    #[error("state has {got} coefficients, basis has {expected}")]
    Dimension { got: usize, expected: usize },
    #[error(transparent)]
    Drive(#[from] DriveError),
}

/// Galerkin coefficients at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub t: f64,
    pub coeffs: Vec<Complex64>,
}

impl WaveState {
    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Complex conjugate, as used for time reversal.
    pub fn conj(&self) -> Self {
        Self {
            t: self.t,
            coeffs: self.coeffs.iter().map(|c| c.conj()).collect(),
        }
    }
}

/// Initial Gaussian wave packet on a single arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPacket {
    /// Zero-based arm index.
    pub arm: usize,
    pub center: f64,
    pub sigma: f64,
    /// Carrier wavenumber `q`; packets start at rest by default.
    #[serde(default)]
    pub carrier: f64,
}

impl GaussianPacket {
    /// `(2πσ²)^{-1/4} exp[-(x-x0)²/(4σ²)] e^{iqx}`.
    pub fn amplitude(&self, x: f64) -> Complex64 {
        let s2 = self.sigma * self.sigma;
        let env = (2.0 * PI * s2).powf(-0.25) * (-(x - self.center).powi(2) / (4.0 * s2)).exp();
        Complex64::from_polar(env, self.carrier * x)
    }

    /// Probability density of the packet, `N(x0, σ²)`.
    pub fn density(&self, x: f64) -> f64 {
        self.amplitude(x).norm_sqr()
    }
}

/// Result of projecting a packet onto the basis.
#[derive(Debug, Clone)]
pub struct Projection {
    pub state: WaveState,
    /// `1 - Σ|C_n|² / ‖g‖²` before renormalization, `g` restricted to the arm.
    pub projection_loss: f64,
    /// Probability of the unrestricted packet lying outside the arm.
    pub support_loss: f64,
}

/// Projects a Gaussian packet onto the basis and renormalizes.
pub fn init_gaussian(
    basis: &SpectralBasis,
    packet: &GaussianPacket,
) -> Result<Projection, PropagatorError> {
    let arms = basis.graph().arm_count();
    if packet.arm >= arms {
        return Err(PropagatorError::BadPacket(format!(
            "arm {} does not exist",
            packet.arm + 1
        )));
    }
    if !(packet.sigma.is_finite()
        && packet.sigma > 0.0
        && packet.center.is_finite()
        && packet.carrier.is_finite())
    {
        return Err(PropagatorError::BadPacket(format!(
            "sigma={} center={}",
            packet.sigma, packet.center
        )));
    }
    let length = basis.graph().arm_length(packet.arm);
    let reach = SUPPORT_SIGMAS * packet.sigma;
    if !(packet.center - reach >= 0.0 && packet.center + reach <= length) {
        return Err(PropagatorError::SupportViolation {
            arm: packet.arm,
            center: packet.center,
            sigma: packet.sigma,
            length,
        });
    }

    // The envelope is below 1e-16 of its peak outside ±12σ.
    let lo = (packet.center - 12.0 * packet.sigma).max(0.0);
    let hi = (packet.center + 12.0 * packet.sigma).min(length);
    let kappa = basis
        .k_max()
        .max(packet.carrier.abs() + 10.0 / packet.sigma);
    let rule = GaussLegendre::new(16);
    let (xs, ws) = arm_nodes(&rule, hi - lo, kappa, 32.0);
    let xs: Vec<f64> = xs.into_iter().map(|x| x + lo).collect();

    let g: Vec<Complex64> = xs.iter().map(|&x| packet.amplitude(x)).collect();
    let g_norm: f64 = g.iter().zip(&ws).map(|(v, w)| w * v.norm_sqr()).sum();
    let phi = basis.sample_arm(packet.arm, &xs);
    let coeffs: Vec<Complex64> = (0..basis.len())
        .map(|n| {
            phi.column(n)
                .iter()
                .zip(&g)
                .zip(&ws)
                .map(|((p, v), w)| v * (w * p))
                .sum()
        })
        .collect();
    let captured: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
    let projection_loss = 1.0 - captured / g_norm;
    if projection_loss > MAX_PROJECTION_LOSS {
        return Err(PropagatorError::TruncationTooSmall {
            loss: projection_loss,
            tolerance: MAX_PROJECTION_LOSS,
        });
    }
    let scale = captured.sqrt().recip();
    let coeffs = coeffs.into_iter().map(|c| c * scale).collect();
    Ok(Projection {
        state: WaveState { t: 0.0, coeffs },
        projection_loss,
        support_loss: 1.0 - g_norm,
    })
}

/// Reference frame of the interaction picture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    /// `E = k_n²`: only the kinetic diagonal is applied analytically.
    Free,
    /// `E` = spectrum of the full time-independent Hamiltonian.
    #[default]
    Static,
}

/// Reference diagonal plus operators expressed in its eigenbasis.
#[derive(Debug, Clone)]
pub struct Frame {
    kind: FrameKind,
    energies: Vec<f64>,
    /// Columns are frame basis vectors in the graph eigenbasis.
    vectors: Option<DMatrix<f64>>,
    static_part: StaticPart,
    lattice: Option<DMatrix<f64>>,
    position: Vec<DMatrix<f64>>,
}

impl Frame {
    /// Builds the frame for the time-independent part of `drive`.
    pub fn new(
        kind: FrameKind,
        basis: &SpectralBasis,
        couplings: &CouplingSet,
        drive: &DriveSpec,
    ) -> Result<Self, PropagatorError> {
        drive.validate(basis.graph().arm_count())?;
        let static_part = drive.static_part();
        let kinetic: Vec<f64> = basis.wavenumbers().iter().map(|k| k * k).collect();
        let needs_lattice = drive.potential.modulation.is_some() || kind == FrameKind::Free;
        match kind {
            FrameKind::Free => Ok(Self {
                kind,
                energies: kinetic.iter().map(|e| e + static_part.offset).collect(),
                vectors: None,
                static_part,
                lattice: needs_lattice.then(|| couplings.iv_unit.clone()),
                position: couplings.position.clone(),
            }),
            FrameKind::Static => {
                let mut h = DMatrix::from_diagonal(&DVector::from_vec(kinetic));
                for (op, w) in static_part.components() {
                    h += operator(couplings, op) * w;
                }
                let eig = h.symmetric_eigen();
                // Deterministic ordering and sign convention.
                let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
                order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
                let n = order.len();
                let mut q = DMatrix::zeros(n, n);
                let mut energies = Vec::with_capacity(n);
                for (dst, &src) in order.iter().enumerate() {
                    let col = eig.eigenvectors.column(src);
                    let pivot = col.iamax();
                    let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
                    q.set_column(dst, &(col * sign));
                    energies.push(eig.eigenvalues[src] + static_part.offset);
                }
                let transform = |m: &DMatrix<f64>| {
                    let t = q.tr_mul(m) * &q;
                    // symmetrize away rounding
                    (&t + t.transpose()) * 0.5
                };
                Ok(Self {
                    kind,
                    energies,
                    lattice: needs_lattice.then(|| transform(&couplings.iv_unit)),
                    position: couplings.position.iter().map(transform).collect(),
                    vectors: Some(q),
                    static_part,
                })
            }
        }
    }

    pub fn kind(&self) -> FrameKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// Reference energies `E`.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    fn operator(&self, op: Operator) -> Result<&DMatrix<f64>, PropagatorError> {
        match op {
            Operator::Lattice => self.lattice.as_ref().ok_or_else(|| {
                PropagatorError::FrameMismatch("lattice operator was not prepared".into())
            }),
            Operator::Position(j) => Ok(&self.position[j]),
        }
    }

    fn enter_frame(&self, coeffs: &[Complex64]) -> Split {
        let re = DVector::from_iterator(coeffs.len(), coeffs.iter().map(|c| c.re));
        let im = DVector::from_iterator(coeffs.len(), coeffs.iter().map(|c| c.im));
        match &self.vectors {
            None => Split {
                re: re.data.into(),
                im: im.data.into(),
            },
            Some(q) => Split {
                re: q.tr_mul(&re).data.into(),
                im: q.tr_mul(&im).data.into(),
            },
        }
    }

    fn leave_frame(&self, b: &Split) -> Vec<Complex64> {
        let (re, im) = match &self.vectors {
            None => (b.re.clone(), b.im.clone()),
            Some(q) => (
                (q * DVector::from_column_slice(&b.re)).data.into(),
                (q * DVector::from_column_slice(&b.im)).data.into(),
            ),
        };
        re.into_iter()
            .zip(im)
            .map(|(r, i)| Complex64::new(r, i))
            .collect()
    }
}

fn operator(couplings: &CouplingSet, op: Operator) -> &DMatrix<f64> {
    match op {
        Operator::Lattice => &couplings.iv_unit,
        Operator::Position(j) => &couplings.position[j],
    }
}

/// Complex vector stored as separate real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
struct Split {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Split {
    fn zeros(n: usize) -> Self {
        Self {
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    fn norm_sqr(&self) -> f64 {
        self.re.iter().map(|x| x * x).sum::<f64>() + self.im.iter().map(|x| x * x).sum::<f64>()
    }

    /// `e^{-i E τ}`.
    fn phases(energies: &[f64], tau: f64) -> Self {
        let (re, im) = energies
            .iter()
            .map(|e| {
                let (s, c) = (e * tau).sin_cos();
                (c, -s)
            })
            .unzip();
        Self { re, im }
    }

    /// `self = base + h Σ w_i k_i`.
    fn combine(&mut self, base: &Split, h: f64, parts: &[(f64, &Split)]) {
        self.re.copy_from_slice(&base.re);
        self.im.copy_from_slice(&base.im);
        for &(w, k) in parts {
            if w == 0.0 {
                continue;
            }
            let hw = h * w;
            for (d, s) in self.re.iter_mut().zip(&k.re) {
                *d += hw * s;
            }
            for (d, s) in self.im.iter_mut().zip(&k.im) {
                *d += hw * s;
            }
        }
    }

    /// `self = p ∘ self`.
    fn rotate(&mut self, p: &Split) {
        for i in 0..self.re.len() {
            let (a, b) = (self.re[i], self.im[i]);
            self.re[i] = p.re[i] * a - p.im[i] * b;
            self.im[i] = p.re[i] * b + p.im[i] * a;
        }
    }
}

/// Integration tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Local error per step relative to the state norm.
    pub rtol: f64,
    /// Maximum `|Σ|C_n|² - 1|` at any sample.
    pub norm_drift: f64,
    pub min_step: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            norm_drift: 1e-6,
            min_step: 1e-12,
        }
    }
}

/// Counters from one `evolve` call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolveStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evaluations: usize,
    pub max_norm_defect: f64,
    pub final_norm_defect: f64,
}

struct Term {
    law: TimeLaw,
    matrix: DMatrix<f64>,
}

/// A drive bound to a frame, ready to integrate.
pub struct Propagator<'f> {
    frame: &'f Frame,
    terms: Vec<Term>,
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B5: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
const E5: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

impl<'f> Propagator<'f> {
    pub fn new(frame: &'f Frame, drive: &DriveSpec) -> Result<Self, PropagatorError> {
        drive.validate(frame.position.len())?;
        let static_part = drive.static_part();
        if static_part != frame.static_part {
            return Err(PropagatorError::FrameMismatch(format!(
                "frame built for {:?}, drive has {:?}",
                frame.static_part, static_part
            )));
        }
        let n = frame.dim();
        let mut terms = Vec::new();
        let mut add =
            |law: TimeLaw, components: &[(Operator, f64)]| -> Result<(), PropagatorError> {
                if components.is_empty() {
                    return Ok(());
                }
                let mut m = DMatrix::<f64>::zeros(n, n);
                for &(op, w) in components {
                    m += frame.operator(op)? * w;
                }
                terms.push(Term { law, matrix: m });
                Ok(())
            };
        if frame.kind == FrameKind::Free {
            add(TimeLaw::Constant, &static_part.components())?;
        }
        for term in drive.dynamic_terms() {
            add(term.law, &term.components)?;
        }
        Ok(Self { frame, terms })
    }

    /// `out = -i e^{iEτ'} W(t) e^{-iEτ'} y` where `p = e^{-iEτ'}`.
    fn rhs(&self, t: f64, p: Option<&Split>, y: &Split, u: &mut Split, out: &mut Split) {
        let n = self.frame.dim();
        u.re.copy_from_slice(&y.re);
        u.im.copy_from_slice(&y.im);
        if let Some(p) = p {
            u.rotate(p);
        }
        out.re.iter_mut().for_each(|v| *v = 0.0);
        out.im.iter_mut().for_each(|v| *v = 0.0);
        for term in &self.terms {
            let coef = term.law.eval(t);
            if coef != 0.0 {
                symv_accumulate(
                    term.matrix.as_slice(),
                    n,
                    coef,
                    &u.re,
                    &u.im,
                    &mut out.re,
                    &mut out.im,
                );
            }
        }
        // out <- -i conj(p) ∘ out
        for i in 0..n {
            let (vr, vi) = (out.re[i], out.im[i]);
            let (pr, pi) = p.map_or((1.0, 0.0), |p| (p.re[i], p.im[i]));
            let (ar, ai) = (pr * vr + pi * vi, pr * vi - pi * vr);
            out.re[i] = ai;
            out.im[i] = -ar;
        }
    }

    /// Advances `state` to `t_end`, calling `observer` at the initial time,
    /// every `sample_dt`, and at `t_end`.
    pub fn evolve<F>(
        &self,
        state: &WaveState,
        t_end: f64,
        sample_dt: f64,
        tol: &Tolerances,
        mut observer: F,
    ) -> Result<(WaveState, EvolveStats), PropagatorError>
    where
        F: FnMut(&WaveState),
    {
        let n = self.frame.dim();
        if state.coeffs.len() != n {
            return Err(PropagatorError::Dimension {
                got: state.coeffs.len(),
                expected: n,
            });
        }
        if !(t_end > state.t) {
            return Err(PropagatorError::BadInterval {
                t_start: state.t,
                t_end,
            });
        }
        let t0 = state.t;
        let sample_dt = if sample_dt > 0.0 {
            sample_dt
        } else {
            t_end - t0
        };
        let mut stats = EvolveStats::default();
        let mut b = self.frame.enter_frame(&state.coeffs);

        let check = |t: f64, b: &Split, stats: &mut EvolveStats| -> Result<(), PropagatorError> {
            let defect = (b.norm_sqr() - 1.0).abs();
            stats.max_norm_defect = stats.max_norm_defect.max(defect);
            stats.final_norm_defect = defect;
            if defect > tol.norm_drift {
                return Err(PropagatorError::NormDriftExceeded {
                    t,
                    drift: defect,
                    tolerance: tol.norm_drift,
                });
            }
            Ok(())
        };
        check(t0, &b, &mut stats)?;
        observer(&WaveState {
            t: t0,
            coeffs: state.coeffs.clone(),
        });

        let mut k: Vec<Split> = (0..7).map(|_| Split::zeros(n)).collect();
        let mut y = Split::zeros(n);
        let mut u = Split::zeros(n);
        let mut err = Split::zeros(n);
        let zeros = Split::zeros(n);
        let mut fsal_valid = false;
        let mut h = sample_dt.min(1e-2);
        let mut t = t0;
        let mut sample_index = 1usize;

        loop {
            let mut target = t0 + sample_index as f64 * sample_dt;
            if target > t_end - 1e-9 * sample_dt {
                target = t_end;
            }
            while t < target {
                let remaining = target - t;
                let last = h >= remaining;
                let step = if last { remaining } else { h };
                let phases: Vec<Split> = C[1..]
                    .iter()
                    .map(|&c| Split::phases(&self.frame.energies, c * step))
                    .collect();
                if !fsal_valid {
                    self.rhs(t, None, &b, &mut u, &mut k[0]);
                    stats.rhs_evaluations += 1;
                    fsal_valid = true;
                }
                let stages: [&[f64]; 5] = [&A2, &A3, &A4, &A5, &A6];
                for (s, row) in stages.iter().enumerate() {
                    {
                        let parts: Vec<(f64, &Split)> = row.iter().copied().zip(k.iter()).collect();
                        y.combine(&b, step, &parts);
                    }
                    let rest = &mut k[s + 1..];
                    self.rhs(
                        t + C[s + 1] * step,
                        Some(&phases[s]),
                        &y,
                        &mut u,
                        &mut rest[0],
                    );
                }
                {
                    let parts: Vec<(f64, &Split)> = B5.iter().copied().zip(k.iter()).collect();
                    y.combine(&b, step, &parts);
                }
                self.rhs(t + step, Some(&phases[5]), &y, &mut u, &mut k[6]);
                stats.rhs_evaluations += 6;
                {
                    let parts: Vec<(f64, &Split)> = E5.iter().copied().zip(k.iter()).collect();
                    err.combine(&zeros, step, &parts);
                }
                let scale = tol.rtol * b.norm_sqr().max(y.norm_sqr()).sqrt();
                let ratio = err.norm_sqr().sqrt() / scale;
                if ratio <= 1.0 {
                    // Accept: leave the picture anchored at t.
                    y.rotate(&phases[5]);
                    std::mem::swap(&mut b, &mut y);
                    let mut k7 = std::mem::replace(&mut k[6], Split::zeros(0));
                    k7.rotate(&phases[5]);
                    k[0] = k7;
                    k[6] = Split::zeros(n);
                    fsal_valid = true;
                    t = if last { target } else { t + step };
                    stats.accepted_steps += 1;
                    let factor = if ratio == 0.0 {
                        5.0
                    } else {
                        (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
                    };
                    // A step shortened to land on a sample says nothing about the proposal.
                    if !last || step >= h {
                        h = step * factor;
                    }
                } else {
                    stats.rejected_steps += 1;
                    h = step * (0.9 * ratio.powf(-0.2)).max(0.2);
                }
                if h < tol.min_step {
                    return Err(PropagatorError::StepUnderflow { t, step: h });
                }
            }
            check(t, &b, &mut stats)?;
            observer(&WaveState {
                t,
                coeffs: self.frame.leave_frame(&b),
            });
            if target >= t_end {
                break;
            }
            sample_index += 1;
        }
        Ok((
            WaveState {
                t: t_end,
                coeffs: self.frame.leave_frame(&b),
            },
            stats,
        ))
    }
}

/// `P_j = C† G_j C` for every arm.
pub fn partial_norms(state: &WaveState, couplings: &CouplingSet) -> Vec<f64> {
    couplings
        .overlap
        .iter()
        .map(|g| quadratic_form(g, &state.coeffs))
        .collect()
}

/// `C† X_j C` for every arm (unnormalized first moments).
pub fn arm_moments(state: &WaveState, couplings: &CouplingSet) -> Vec<f64> {
    couplings
        .position
        .iter()
        .map(|x| quadratic_form(x, &state.coeffs))
        .collect()
}

/// `C† M C` for real symmetric `M`.
pub fn quadratic_form(m: &DMatrix<f64>, c: &[Complex64]) -> f64 {
    let n = c.len();
    let re: Vec<f64> = c.iter().map(|z| z.re).collect();
    let im: Vec<f64> = c.iter().map(|z| z.im).collect();
    let mut yr = vec![0.0; n];
    let mut yi = vec![0.0; n];
    symv_accumulate(m.as_slice(), n, 1.0, &re, &im, &mut yr, &mut yi);
    re.iter().zip(&yr).map(|(a, b)| a * b).sum::<f64>()
        + im.iter().zip(&yi).map(|(a, b)| a * b).sum::<f64>()
}

/// Uniform per-arm grids with precomputed mode values.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    arms: Vec<ArmGrid>,
}

#[derive(Debug, Clone)]
struct ArmGrid {
    xs: Vec<f64>,
    spacing: f64,
    modes: DMatrix<f64>,
}

impl DensityGrid {
    /// `points_per_wavelength` counts grid points per `2π/k_max`; at least 8.
    pub fn new(basis: &SpectralBasis, points_per_wavelength: f64) -> Result<Self, PropagatorError> {
        if !(points_per_wavelength >= 8.0) {
            return Err(PropagatorError::GridTooCoarse(points_per_wavelength));
        }
        let counts: Vec<usize> = basis
            .graph()
            .arm_lengths()
            .iter()
            .map(|l| (points_per_wavelength * basis.k_max() * l / (2.0 * PI)).ceil() as usize + 1)
            .collect();
        Ok(Self::with_points(basis, &counts))
    }

    /// Explicit point counts per arm, endpoints included.
    pub fn with_points(basis: &SpectralBasis, points_per_arm: &[usize]) -> Self {
        let arms = points_per_arm
            .iter()
            .enumerate()
            .map(|(arm, &count)| {
                let count = count.max(2);
                let l = basis.graph().arm_length(arm);
                let spacing = l / (count - 1) as f64;
                let xs: Vec<f64> = (0..count)
                    .map(|i| {
                        if i + 1 == count {
                            l
                        } else {
                            i as f64 * spacing
                        }
                    })
                    .collect();
                let modes = basis.sample_arm(arm, &xs);
                ArmGrid { xs, spacing, modes }
            })
            .collect();
        Self { arms }
    }

    pub fn arm_count(&self) -> usize {
        self.arms.len()
    }

    pub fn xs(&self, arm: usize) -> &[f64] {
        &self.arms[arm].xs
    }

    pub fn spacing(&self, arm: usize) -> f64 {
        self.arms[arm].spacing
    }

    /// `Ψ_j(x)` on arm `arm`.
    pub fn wavefunction(&self, arm: usize, state: &WaveState) -> Vec<Complex64> {
        let re = DVector::from_iterator(state.coeffs.len(), state.coeffs.iter().map(|c| c.re));
        let im = DVector::from_iterator(state.coeffs.len(), state.coeffs.iter().map(|c| c.im));
        let m = &self.arms[arm].modes;
        let (r, i) = (m * re, m * im);
        r.iter()
            .zip(i.iter())
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect()
    }

    /// `|Ψ_j(x)|²` on every arm.
    pub fn density(&self, state: &WaveState) -> Vec<Vec<f64>> {
        (0..self.arms.len())
            .map(|arm| {
                self.wavefunction(arm, state)
                    .iter()
                    .map(|z| z.norm_sqr())
                    .collect()
            })
            .collect()
    }

    /// Trapezoid integral of each arm's density.
    pub fn integrate(&self, densities: &[Vec<f64>]) -> Vec<f64> {
        densities
            .iter()
            .zip(&self.arms)
            .map(|(d, a)| crate::quadrature::trapezoid(d, a.spacing))
            .collect()
    }
}

/// One-shot density evaluation with explicit point counts per arm.
pub fn density_on_grid(
    state: &WaveState,
    basis: &SpectralBasis,
    points_per_arm: &[usize],
) -> Vec<Vec<f64>> {
    DensityGrid::with_points(basis, points_per_arm).density(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::LatticePotentialSpec;
    use crate::drive::FieldLaw;
    use crate::graph::StarGraph;

    fn small_setup(v0: f64) -> (SpectralBasis, CouplingSet, DriveSpec) {
        let basis =
            SpectralBasis::new(StarGraph::new(vec![3.0, 3.0 + 2f64.sqrt()]).unwrap(), 6.0).unwrap();
        let potential = LatticePotentialSpec::new(v0, 1.0).unwrap();
        let couplings = CouplingSet::assemble(&basis, &potential).unwrap();
        let drive = DriveSpec {
            omega: Some(0.7),
            arms: vec![
                FieldLaw::Sinusoidal {
                    strength: 0.4,
                    phase: 0.1,
                },
                FieldLaw::Constant { strength: -0.3 },
            ],
            potential,
        };
        (basis, couplings, drive)
    }

    fn unit_state(n: usize) -> WaveState {
        let mut coeffs: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new((i as f64).cos(), (i as f64 * 0.5).sin()))
            .collect();
        let norm = coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        coeffs.iter_mut().for_each(|c| *c /= norm);
        WaveState { t: 0.0, coeffs }
    }

    #[test]
    fn free_evolution_is_pure_phase() {
        let (basis, couplings, mut drive) = small_setup(0.0);
        drive.arms = vec![FieldLaw::Constant { strength: 0.0 }; 2];
        drive.omega = None;
        let state = unit_state(basis.len());
        for kind in [FrameKind::Free, FrameKind::Static] {
            let frame = Frame::new(kind, &basis, &couplings, &drive).unwrap();
            let prop = Propagator::new(&frame, &drive).unwrap();
            let (end, _) = prop
                .evolve(&state, 3.7, 1.0, &Tolerances::default(), |_| {})
                .unwrap();
            for (n, (c0, c1)) in state.coeffs.iter().zip(&end.coeffs).enumerate() {
                let k2 = basis.wavenumbers()[n].powi(2);
                let want = c0 * Complex64::from_polar(1.0, -k2 * 3.7);
                assert!((c1 - want).norm() < 1e-10, "{kind:?} n={n}");
            }
        }
    }

    #[test]
    fn frames_agree_and_conserve_norm() {
        let (basis, couplings, drive) = small_setup(3.0);
        let state = unit_state(basis.len());
        let run = |kind| {
            let frame = Frame::new(kind, &basis, &couplings, &drive).unwrap();
            let prop = Propagator::new(&frame, &drive).unwrap();
            prop.evolve(&state, 5.0, 0.5, &Tolerances::default(), |_| {})
                .unwrap()
        };
        let (a, sa) = run(FrameKind::Free);
        let (b, sb) = run(FrameKind::Static);
        let diff: f64 = a
            .coeffs
            .iter()
            .zip(&b.coeffs)
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff < 1e-7, "{diff:e}");
        assert!(sa.final_norm_defect < 1e-8 && sb.final_norm_defect < 1e-8);
    }

    #[test]
    fn observer_sees_every_sample() {
        let (basis, couplings, drive) = small_setup(1.0);
        let frame = Frame::new(FrameKind::Static, &basis, &couplings, &drive).unwrap();
        let prop = Propagator::new(&frame, &drive).unwrap();
        let mut times = Vec::new();
        prop.evolve(
            &unit_state(basis.len()),
            1.05,
            0.25,
            &Tolerances::default(),
            |s| times.push(s.t),
        )
        .unwrap();
        assert_eq!(times, vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.05]);
    }

    #[test]
    fn frame_mismatch_is_reported() {
        let (basis, couplings, drive) = small_setup(1.0);
        let frame = Frame::new(FrameKind::Static, &basis, &couplings, &drive).unwrap();
        let mut other = drive.clone();
        other.potential.v0 = 2.0;
        assert!(matches!(
            Propagator::new(&frame, &other),
            Err(PropagatorError::FrameMismatch(_))
        ));
    }

    #[test]
    fn packet_errors() {
        let basis =
            SpectralBasis::new(StarGraph::new(vec![10.0, 11.0 + 2f64.sqrt()]).unwrap(), 8.0)
                .unwrap();
        let p = GaussianPacket {
            arm: 0,
            center: 5.0,
            sigma: 2.0,
            carrier: 0.0,
        };
        assert!(matches!(
            init_gaussian(&basis, &p),
            Err(PropagatorError::SupportViolation { .. })
        ));
        let p = GaussianPacket {
            arm: 3,
            center: 5.0,
            sigma: 1.0,
            carrier: 0.0,
        };
        assert!(matches!(
            init_gaussian(&basis, &p),
            Err(PropagatorError::BadPacket(_))
        ));
        let coarse =
            SpectralBasis::new(StarGraph::new(vec![10.0, 11.0 + 2f64.sqrt()]).unwrap(), 0.5)
                .unwrap();
        let p = GaussianPacket {
            arm: 0,
            center: 5.0,
            sigma: 0.5,
            carrier: 0.0,
        };
        assert!(matches!(
            init_gaussian(&coarse, &p),
            Err(PropagatorError::TruncationTooSmall { .. })
        ));
    }

    #[test]
    fn bad_interval_and_grid() {
        let (basis, couplings, drive) = small_setup(1.0);
        let frame = Frame::new(FrameKind::Free, &basis, &couplings, &drive).unwrap();
        let prop = Propagator::new(&frame, &drive).unwrap();
        let s = unit_state(basis.len());
        assert!(matches!(
            prop.evolve(&s, 0.0, 0.1, &Tolerances::default(), |_| {}),
            Err(PropagatorError::BadInterval { .. })
        ));
        assert!(matches!(
            DensityGrid::new(&basis, 4.0),
            Err(PropagatorError::GridTooCoarse(_))
        ));
    }
}

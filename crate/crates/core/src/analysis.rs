//! Observables extracted from trajectories: Gaussian width fits, the
//! effective-mass width law, Bloch period and amplitude, saturation of
//! partial norms, and the drive-phase sweep.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::CouplingSet;
use crate::drive::{DriveSpec, FieldLaw};
use crate::propagator::{partial_norms, Frame, Propagator, Tolerances, WaveState};
use crate::spectrum::SpectralBasis;

pub const MAX_FIT_ITERATIONS: usize = 100;
pub const FIT_STEP_TOL: f64 = 1e-9;
/// Secondary bumps must stay below `peak / DOMINANCE`.
pub const DOMINANCE: f64 = 5.0;
/// Spectral peak must exceed this multiple of the median background.
pub const PEAK_TO_BACKGROUND: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("profile has no dominant bump: secondary peak at x={x} is {ratio:.2} of the maximum")]
    MultiModal { x: f64, ratio: f64 },
    #[error("Gaussian fit did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("profile is empty or not positive")]
    EmptyProfile,
    #[error("spectral peak is only {ratio:.2}x the background")]
    NoOscillation { ratio: f64 },
    #[error("series spans {span}, needs at least two periods ({needed})")]
    ShortSeries { span: f64, needed: f64 },
    #[error("sweep grid point {0} lies outside [0, 2π)")]
    BadGrid(f64),
    #[error("arm {} has no sinusoidal law to shift", .0 + 1)]
    NotSinusoidal(usize),
    #[error("no band gap found in the lattice spectrum")]
    NoBandGap,
}

// ---------------------------------------------------------------------------
// Bessel J0

/// `J₀(x)` to about 1e-15 absolute.
///
/// Power series up to |x| = 8, Miller's backward recurrence up to 25, and
/// the Hankel asymptotic expansion beyond.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x <= 8.0 {
        j0_series(x)
    } else if x <= 25.0 {
        j0_miller(x)
    } else {
        j0_asymptotic(x)
    }
}

fn j0_series(x: f64) -> f64 {
    let q = -0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        term *= q / (k * k) as f64;
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

fn j0_miller(x: f64) -> f64 {
    // Start well above x; the recurrence is stable downward.
    let start = 2 * ((x as usize + 40) / 2);
    let (mut above, mut current) = (0.0f64, 1e-30f64);
    let mut norm = 0.0;
    let mut j0 = 0.0;
    for k in (1..=start).rev() {
        let below = 2.0 * k as f64 / x * current - above;
        above = current;
        current = below;
        if (k - 1) % 2 == 0 && k > 1 {
            norm += 2.0 * current;
        }
        if current.abs() > 1e250 {
            above *= 1e-250;
            current *= 1e-250;
            norm *= 1e-250;
        }
        if k == 1 {
            j0 = current;
        }
    }
    j0 / (norm + j0)
}

fn j0_asymptotic(x: f64) -> f64 {
    // a_k(0) = Π (-(2i-1)²) / (k! 8^k)
    let (mut p, mut q) = (0.0, 0.0);
    let mut a = 1.0f64;
    let mut prev = f64::INFINITY;
    for k in 0..40 {
        let term = a / x.powi(k);
        if term.abs() > prev || term.abs() < 1e-18 {
            break;
        }
        prev = term.abs();
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            p += sign * term;
        } else {
            q += sign * term;
        }
        let m = (2 * k + 1) as f64;
        a *= -(m * m) / ((k + 1) as f64 * 8.0);
    }
    let w = x - 0.25 * PI;
    (2.0 / (PI * x)).sqrt() * (p * w.cos() - q * w.sin())
}

// ---------------------------------------------------------------------------
// Width law

/// `σ₀ √(1 + t² [J₀(f/ω) cos((f/ω) cos φ) / σ₀²]²)`.
pub fn predicted_width(t: f64, f: f64, omega: f64, phase: f64, sigma0: f64) -> f64 {
    let ratio = f / omega;
    let inverse_mass = bessel_j0(ratio) * (ratio * phase.cos()).cos();
    let g = t * inverse_mass / (sigma0 * sigma0);
    sigma0 * (1.0 + g * g).sqrt()
}

// ---------------------------------------------------------------------------
// Gaussian fit

/// Result of fitting `A exp[-(x-c)²/(2σ²)]` to a density profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthFit {
    pub center: f64,
    pub sigma: f64,
    pub amplitude: f64,
    /// RMS misfit over the window relative to the RMS of the data.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitOptions {
    /// Lattice period; when set, the profile is box-averaged over one period
    /// before fitting and the box variance `d²/12` is removed from `σ²`.
    pub smoothing_period: Option<f64>,
    /// Overrides the half-maximum width estimate that sets the window.
    pub initial_sigma: Option<f64>,
}

/// Least-squares Gaussian fit by Gauss–Newton on the window `peak ± 4σ`.
///
/// `xs` must be uniformly spaced and increasing.
pub fn fit_gaussian_width(
    xs: &[f64],
    density: &[f64],
    options: FitOptions,
) -> Result<WidthFit, AnalysisError> {
    if xs.len() < 5 || xs.len() != density.len() {
        return Err(AnalysisError::EmptyProfile);
    }
    let h = (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64;
    let profile = match options.smoothing_period {
        Some(d) if d > 0.0 => box_average(density, (d / h).round().max(1.0) as usize),
        _ => density.to_vec(),
    };
    let peak = argmax(&profile).ok_or(AnalysisError::EmptyProfile)?;
    let top = profile[peak];
    if !(top > 0.0) {
        return Err(AnalysisError::EmptyProfile);
    }
    check_dominance(xs, &profile, peak)?;

    let sigma_est = options
        .initial_sigma
        .unwrap_or_else(|| half_max_sigma(xs, &profile, peak));
    let (lo, hi) = (xs[peak] - 4.0 * sigma_est, xs[peak] + 4.0 * sigma_est);
    let window: Vec<(f64, f64)> = xs
        .iter()
        .zip(&profile)
        .filter(|(x, _)| **x >= lo && **x <= hi)
        .map(|(&x, &y)| (x, y))
        .collect();
    if window.len() < 4 {
        return Err(AnalysisError::EmptyProfile);
    }

    // Moment start.
    let m0: f64 = window.iter().map(|p| p.1).sum();
    let mut c = window.iter().map(|p| p.0 * p.1).sum::<f64>() / m0;
    let mut s = (window.iter().map(|p| (p.0 - c).powi(2) * p.1).sum::<f64>() / m0).sqrt();
    let mut a = top;

    let sse = |a: f64, c: f64, s: f64| -> f64 {
        window
            .iter()
            .map(|&(x, y)| (a * (-(x - c).powi(2) / (2.0 * s * s)).exp() - y).powi(2))
            .sum()
    };
    let mut current = sse(a, c, s);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_FIT_ITERATIONS {
        iterations += 1;
        // Normal equations J^T J δ = -J^T r for (A, c, σ).
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for &(x, y) in &window {
            let u = (x - c) / s;
            let e = (-0.5 * u * u).exp();
            let r = a * e - y;
            let g = [e, a * e * u / s, a * e * u * u / s];
            for i in 0..3 {
                jtr[i] += g[i] * r;
                for j in 0..3 {
                    jtj[i][j] += g[i] * g[j];
                }
            }
        }
        let Some(delta) = solve3(jtj, [-jtr[0], -jtr[1], -jtr[2]]) else {
            break;
        };
        // Halve the step until the misfit does not grow.
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let (na, nc, ns) = (
                a + scale * delta[0],
                c + scale * delta[1],
                s + scale * delta[2],
            );
            if ns > 0.0 {
                let trial = sse(na, nc, ns);
                if trial <= current {
                    accepted = Some((na, nc, ns, trial));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((na, nc, ns, trial)) = accepted else {
            converged = true;
            break;
        };
        let rel = ((na - a).abs() / na.abs())
            .max((nc - c).abs() / nc.abs().max(ns))
            .max((ns - s).abs() / ns);
        a = na;
        c = nc;
        s = ns;
        current = trial;
        if rel < FIT_STEP_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(AnalysisError::NoConvergence(MAX_FIT_ITERATIONS));
    }
    let norm: f64 = window.iter().map(|p| p.1 * p.1).sum();
    let sigma = match options.smoothing_period {
        Some(d) if d > 0.0 => (s * s - d * d / 12.0).max(0.0).sqrt(),
        _ => s,
    };
    Ok(WidthFit {
        center: c,
        sigma,
        amplitude: a,
        residual: (current / norm).sqrt(),
        iterations,
    })
}

/// Centered moving average spanning `width` sample spacings.
///
/// Even widths use half weights on the two end samples so the box stays
/// centered on the sample.
fn box_average(v: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 {
        return v.to_vec();
    }
    let n = v.len() as isize;
    let half = (width / 2) as isize;
    let end_weight = if width % 2 == 0 { 0.5 } else { 1.0 };
    (0..n)
        .map(|i| {
            let (mut sum, mut weight) = (0.0, 0.0);
            for j in (i - half).max(0)..=(i + half).min(n - 1) {
                let w = if (j - i).abs() == half {
                    end_weight
                } else {
                    1.0
                };
                sum += w * v[j as usize];
                weight += w;
            }
            sum / weight
        })
        .collect()
}

fn argmax(v: &[f64]) -> Option<usize> {
    (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b]))
}

/// Rejects profiles with a separate bump above `peak / DOMINANCE`.
fn check_dominance(xs: &[f64], v: &[f64], peak: usize) -> Result<(), AnalysisError> {
    let top = v[peak];
    let report = |i: usize, valley: f64| -> Result<(), AnalysisError> {
        // A genuine bump rises clearly above the valley separating it from the peak.
        if v[i] * DOMINANCE > top && valley < 0.8 * v[i] {
            return Err(AnalysisError::MultiModal {
                x: xs[i],
                ratio: v[i] / top,
            });
        }
        Ok(())
    };
    let mut valley = top;
    for i in (0..peak).rev() {
        valley = valley.min(v[i]);
        if is_local_max(v, i) {
            report(i, valley)?;
        }
    }
    valley = top;
    for i in peak + 1..v.len() {
        valley = valley.min(v[i]);
        if is_local_max(v, i) {
            report(i, valley)?;
        }
    }
    Ok(())
}

fn is_local_max(v: &[f64], i: usize) -> bool {
    let left = i == 0 || v[i] > v[i - 1];
    let right = i + 1 == v.len() || v[i] >= v[i + 1];
    left && right
}

/// `σ` from the full width at half maximum around `peak`.
fn half_max_sigma(xs: &[f64], v: &[f64], peak: usize) -> f64 {
    let half = 0.5 * v[peak];
    let cross = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = peak;
        for i in range {
            if v[i] < half {
                let t = (v[prev] - half) / (v[prev] - v[i]);
                return Some(xs[prev] + t * (xs[i] - xs[prev]));
            }
            prev = i;
        }
        None
    };
    let left = cross(&mut (0..peak).rev()).unwrap_or(xs[0]);
    let right = cross(&mut (peak + 1..v.len())).unwrap_or(xs[xs.len() - 1]);
    ((right - left) / (2.0 * (2.0 * 2f64.ln()).sqrt())).max(xs[1] - xs[0])
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mat = nalgebra::Matrix3::from_fn(|i, j| m[i][j]);
    let rhs = nalgebra::Vector3::from_row_slice(&b);
    mat.lu().solve(&rhs).map(|x| [x[0], x[1], x[2]])
}

/// First moment of `density` within `half_width` of its maximum.
///
/// Tracks the dominant packet while ignoring fractions that tunnel into
/// higher bands and run away.
pub fn windowed_center(xs: &[f64], density: &[f64], half_width: f64) -> Option<f64> {
    let peak = argmax(density)?;
    let x0 = xs[peak];
    let (mut m0, mut m1) = (0.0, 0.0);
    for (&x, &d) in xs.iter().zip(density) {
        if (x - x0).abs() <= half_width {
            m0 += d;
            m1 += d * x;
        }
    }
    (m0 > 0.0).then(|| m1 / m0)
}

// ---------------------------------------------------------------------------
// Band projection

/// A spacing counts as the first band gap once it exceeds this multiple of
/// every spacing below it.
pub const BAND_GAP_FACTOR: f64 = 20.0;

/// Projector onto the lowest band of the untilted lattice `D + V0·IV`.
#[derive(Debug, Clone)]
pub struct BandProjector {
    /// Band states in the graph eigenbasis, one per column.
    states: DMatrix<f64>,
    energies: Vec<f64>,
}

impl BandProjector {
    pub fn new(
        basis: &SpectralBasis,
        couplings: &CouplingSet,
        v0: f64,
    ) -> Result<Self, AnalysisError> {
        let kinetic =
            DVector::from_iterator(basis.len(), basis.wavenumbers().iter().map(|k| k * k));
        let h = DMatrix::from_diagonal(&kinetic) + &couplings.iv_unit * v0;
        let eig = h.symmetric_eigen();
        let mut order: Vec<usize> = (0..basis.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let e: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut widest = 0.0f64;
        let mut count = None;
        for i in 1..e.len() {
            let gap = e[i] - e[i - 1];
            if i >= 2 && gap > BAND_GAP_FACTOR * widest {
                count = Some(i);
                break;
            }
            widest = widest.max(gap);
        }
        let count = count.ok_or(AnalysisError::NoBandGap)?;
        let states = DMatrix::from_fn(basis.len(), count, |r, c| eig.eigenvectors[(r, order[c])]);
        Ok(Self {
            states,
            energies: e[..count].to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// `E_max − E_min` of the band.
    pub fn width(&self) -> f64 {
        self.energies[self.energies.len() - 1] - self.energies[0]
    }

    /// Band component of `state` (not renormalized).
    pub fn project(&self, state: &WaveState) -> WaveState {
        let re = DVector::from_iterator(state.coeffs.len(), state.coeffs.iter().map(|c| c.re));
        let im = DVector::from_iterator(state.coeffs.len(), state.coeffs.iter().map(|c| c.im));
        let pr = &self.states * self.states.tr_mul(&re);
        let pi = &self.states * self.states.tr_mul(&im);
        let coeffs = pr
            .iter()
            .zip(pi.iter())
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        WaveState { t: state.t, coeffs }
    }
}

// ---------------------------------------------------------------------------
// Bloch oscillations

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlochObservables {
    pub period: f64,
    /// `Λ = max⟨x⟩ - min⟨x⟩`.
    pub amplitude: f64,
    /// `Δ = Λ f`.
    pub bandwidth: f64,
    /// Spectral peak over median background.
    pub peak_ratio: f64,
}

/// Dominant period of a uniformly sampled series.
///
/// Mean removed, Hann window, zero padding to 16x, and a parabola through
/// the log-magnitudes at the peak bin.
pub fn dominant_period(dt: f64, series: &[f64]) -> Result<(f64, f64), AnalysisError> {
    let n = series.len();
    if n < 8 {
        return Err(AnalysisError::NoOscillation { ratio: 0.0 });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let padded = (16 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
            Complex::new((v - mean) * w, 0.0)
        })
        .collect();
    buf.resize(padded, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);
    let mag: Vec<f64> = buf[..padded / 2].iter().map(|c| c.norm()).collect();
    // Skip the DC lobe: the Hann main lobe is 2 bins wide at the unpadded resolution.
    let skip = 2 * padded / n;
    let k = skip + argmax(&mag[skip..]).ok_or(AnalysisError::NoOscillation { ratio: 0.0 })?;
    let mut sorted = mag[1..].to_vec();
    sorted.sort_by(f64::total_cmp);
    let background = sorted[sorted.len() / 2];
    let ratio = if background > 0.0 {
        mag[k] / background
    } else {
        f64::INFINITY
    };
    if !(ratio >= PEAK_TO_BACKGROUND) || k + 1 >= mag.len() {
        return Err(AnalysisError::NoOscillation { ratio });
    }
    let (a, b, c) = (mag[k - 1].ln(), mag[k].ln(), mag[k + 1].ln());
    let denom = a - 2.0 * b + c;
    let shift = if denom != 0.0 {
        0.5 * (a - c) / denom
    } else {
        0.0
    };
    let frequency = (k as f64 + shift) / (padded as f64 * dt);
    Ok((1.0 / frequency, ratio))
}

/// Bloch period and amplitude from a uniformly sampled center series.
pub fn bloch_observables(
    dt: f64,
    centers: &[f64],
    f: f64,
    d: f64,
) -> Result<BlochObservables, AnalysisError> {
    let needed = 2.0 * 2.0 * PI / (d * f.abs());
    let span = dt * (centers.len().saturating_sub(1)) as f64;
    if span < needed * (1.0 - 1e-9) {
        return Err(AnalysisError::ShortSeries { span, needed });
    }
    let (period, peak_ratio) = dominant_period(dt, centers)?;
    let max = centers.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = centers.iter().copied().fold(f64::INFINITY, f64::min);
    let amplitude = max - min;
    Ok(BlochObservables {
        period,
        amplitude,
        bandwidth: amplitude * f.abs(),
        peak_ratio,
    })
}

// ---------------------------------------------------------------------------
// Saturation

/// Mean over the trailing `fraction` of `values` if its spread there is below `threshold`.
pub fn saturation_level(values: &[f64], fraction: f64, threshold: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let count = ((values.len() as f64 * fraction).ceil() as usize).clamp(1, values.len());
    let tail = &values[values.len() - count..];
    let max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = tail.iter().copied().fold(f64::INFINITY, f64::min);
    (max - min < threshold).then(|| tail.iter().sum::<f64>() / count as f64)
}

// ---------------------------------------------------------------------------
// Phase sweep

/// `points` phases `2π i / points`.
pub fn phase_grid(points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| 2.0 * PI * i as f64 / points as f64)
        .collect()
}

/// Shared, immutable inputs of a sweep.
pub struct SweepSetup<'a> {
    pub couplings: &'a CouplingSet,
    /// Must be built for the static part of `drive`; phases do not change it.
    pub frame: &'a Frame,
    pub drive: DriveSpec,
    pub initial: WaveState,
    pub tolerances: Tolerances,
    /// Zero-based arm whose phase is swept.
    pub swept_arm: usize,
    /// Zero-based arm whose dominance is scored.
    pub target_arm: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub phase: f64,
    /// Partial norms at `t_final`, or the trajectory's error message.
    pub partial_norms: Result<Vec<f64>, String>,
    pub final_norm_defect: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub t_final: f64,
    pub swept_arm: usize,
    pub target_arm: usize,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// `P_target − max_{j≠target} P_j` at grid point `i`.
    pub fn separation(&self, i: usize) -> Option<f64> {
        let p = self.points[i].partial_norms.as_ref().ok()?;
        let others = p
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != self.target_arm)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        Some(p[self.target_arm] - others)
    }

    /// Grid index of the largest separation among successful points.
    pub fn argmax(&self) -> Option<usize> {
        (0..self.points.len())
            .filter_map(|i| self.separation(i).map(|s| (i, s)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }
}

/// Drive with the phase of `arm` replaced.
pub fn with_phase(drive: &DriveSpec, arm: usize, phase: f64) -> Result<DriveSpec, AnalysisError> {
    let mut out = drive.clone();
    match out.arms.get_mut(arm) {
        Some(FieldLaw::Sinusoidal { phase: p, .. }) => *p = phase,
        _ => return Err(AnalysisError::NotSinusoidal(arm)),
    }
    Ok(out)
}

/// One trajectory per grid phase, run in parallel; results keep grid order.
pub fn phase_sweep(
    setup: &SweepSetup,
    grid: &[f64],
    t_final: f64,
) -> Result<SweepResult, AnalysisError> {
    if let Some(&bad) = grid.iter().find(|p| !(**p >= 0.0 && **p < 2.0 * PI)) {
        return Err(AnalysisError::BadGrid(bad));
    }
    with_phase(&setup.drive, setup.swept_arm, 0.0)?;
    let points = grid
        .par_iter()
        .map(|&phase| {
            let outcome = sweep_point(setup, phase, t_final);
            SweepPoint {
                phase,
                final_norm_defect: outcome.as_ref().ok().map(|o| o.1),
                partial_norms: outcome.map(|o| o.0).map_err(|e| e.to_string()),
            }
        })
        .collect();
    Ok(SweepResult {
        t_final,
        swept_arm: setup.swept_arm,
        target_arm: setup.target_arm,
        points,
    })
}

fn sweep_point(
    setup: &SweepSetup,
    phase: f64,
    t_final: f64,
) -> Result<(Vec<f64>, f64), crate::propagator::PropagatorError> {
    let drive = with_phase(&setup.drive, setup.swept_arm, phase).expect("checked before the sweep");
    let propagator = Propagator::new(setup.frame, &drive)?;
    let (end, stats) =
        propagator.evolve(&setup.initial, t_final, 0.0, &setup.tolerances, |_| {})?;
    Ok((
        partial_norms(&end, setup.couplings),
        stats.final_norm_defect,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j0_matches_known_values() {
        assert_eq!(bessel_j0(0.0), 1.0);
        assert!(bessel_j0(2.404825557695773).abs() < 1e-15);
        assert!((bessel_j0(1.0) - 0.7651976865579666).abs() < 1e-15);
        assert!((bessel_j0(10.0) - -0.2459357644513483).abs() < 1e-14);
        assert!((bessel_j0(30.0) - -0.08636798358104499).abs() < 1e-14);
    }

    #[test]
    fn width_law_special_cases() {
        let f = PI / 10.0;
        assert_eq!(predicted_width(50.0, f, 0.2, 0.0, 6.0), 6.0);
        assert_eq!(predicted_width(0.0, 0.3, 0.2, 1.0, 6.0), 6.0);
        assert_eq!(
            predicted_width(7.0, 0.3, 0.2, 0.4, 6.0),
            predicted_width(7.0, 0.3, 0.2, -0.4, 6.0)
        );
    }

    fn gaussian(xs: &[f64], c: f64, s: f64) -> Vec<f64> {
        xs.iter()
            .map(|x| (-(x - c).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt()))
            .collect()
    }

    #[test]
    fn fit_recovers_exact_gaussian() {
        let xs: Vec<f64> = (0..=800).map(|i| i as f64 * 0.05).collect();
        let fit =
            fit_gaussian_width(&xs, &gaussian(&xs, 22.0, 6.0), FitOptions::default()).unwrap();
        assert!(
            (fit.center - 22.0).abs() < 1e-6 && (fit.sigma - 6.0).abs() < 1e-6,
            "{fit:?}"
        );
    }

    #[test]
    fn two_bumps_are_multimodal() {
        let xs: Vec<f64> = (0..=1000).map(|i| i as f64 * 0.1).collect();
        let a = gaussian(&xs, 30.0, 4.0);
        let b = gaussian(&xs, 70.0, 4.0);
        let v: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + 0.5 * q).collect();
        assert!(matches!(
            fit_gaussian_width(&xs, &v, FitOptions::default()),
            Err(AnalysisError::MultiModal { .. })
        ));
    }

    #[test]
    fn smoothing_removes_lattice_ripple() {
        let xs: Vec<f64> = (0..=2000).map(|i| i as f64 * 0.05).collect();
        let v: Vec<f64> = gaussian(&xs, 50.0, 6.0)
            .iter()
            .zip(&xs)
            .map(|(g, x)| g * (1.0 + 0.6 * (2.0 * PI * x).cos()))
            .collect();
        let opts = FitOptions {
            smoothing_period: Some(1.0),
            initial_sigma: None,
        };
        let fit = fit_gaussian_width(&xs, &v, opts).unwrap();
        assert!(
            (fit.sigma - 6.0).abs() < 0.01 && (fit.center - 50.0).abs() < 0.01,
            "{fit:?}"
        );
    }

    #[test]
    fn synthetic_period() {
        let dt = 0.01;
        let v: Vec<f64> = (0..7000)
            .map(|i| (2.0 * PI * i as f64 * dt / 7.0).sin())
            .collect();
        let (p, _) = dominant_period(dt, &v).unwrap();
        assert!((p - 7.0).abs() < 7e-3, "{p}");
    }

    #[test]
    fn flat_series_has_no_oscillation() {
        let v = vec![1.0; 500];
        assert!(matches!(
            dominant_period(0.1, &v),
            Err(AnalysisError::NoOscillation { .. })
        ));
    }

    #[test]
    fn saturation() {
        let v: Vec<f64> = (0..100)
            .map(|i| {
                if i < 50 {
                    i as f64 / 50.0
                } else {
                    0.7 + 0.001 * (i % 3) as f64
                }
            })
            .collect();
        assert!((saturation_level(&v, 0.1, 0.02).unwrap() - 0.701).abs() < 0.002);
        let ramp: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        assert_eq!(saturation_level(&ramp, 0.1, 0.02), None);
    }
}

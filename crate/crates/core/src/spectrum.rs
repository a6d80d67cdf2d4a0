//! Eigenbasis of the potential-free star graph.
//!
//! Eigenfunctions have the form `ψ_{j,n}(x) = B_n sin[k_n (L_j - x)] / sin(k_n L_j)`
//! where the wavenumbers are the roots of the secular function
//! `S(k) = Σ_j cot(k L_j)`. Between two consecutive poles of `S` (the merged
//! set `{mπ/L_j}`) the function decreases monotonically from `+∞` to `-∞`,
//! so every such interval holds exactly one root.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::graph::StarGraph;
use crate::quadrature::GaussLegendre;

/// Minimum separation of poles contributed by different arms.
pub const POLE_COLLISION_GUARD: f64 = 1e-6;
/// Minimum `|sin(k_n L_j)|` for the eigenfunction form to be used.
pub const SIN_GUARD: f64 = 1e-6;
/// Maximum admissible `|S(k_n)|` after polishing.
pub const SECULAR_RESIDUAL_TOL: f64 = 1e-10;
/// Bisection stops once the bracket is narrower than this.
pub const BISECTION_WIDTH: f64 = 1e-8;
pub const MAX_NEWTON_STEPS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("k_max must be positive and finite, got {0}")]
    BadCutoff(f64),
    #[error(
        "poles of arms {arm_a} and {arm_b} near k={k} are only {gap:e} apart; \
         arm lengths are too commensurate, perturb them"
    )]
    PoleCollision {
        k: f64,
        arm_a: usize,
        arm_b: usize,
        gap: f64,
    },
    #[error("root {index} at k={k} has secular residual {residual:e}")]
    RootResidual { index: usize, k: f64, residual: f64 },
    #[error("|sin(k L_j)| = {value:e} at k={k}, arm {arm}: eigenfunction is ill-posed")]
    SinGuard { k: f64, arm: usize, value: f64 },
    #[error("found {found} roots below k_max but the Weyl estimate is {weyl:.2} (± {arms})")]
    CountMismatch {
        found: usize,
        weyl: f64,
        arms: usize,
    },
    #[error("no eigenmodes below k_max={0}")]
    Empty(f64),
}

// π split into three doubles; the first two products with m are exact.
const PI_HI: f64 = std::f64::consts::PI;
const PI_MID: f64 = 1.2246467991473532e-16;
const PI_LO: f64 = -2.9947698097183397e-33;

/// `kL = mπ + r` with `|r| ≤ π/2`, `r` accurate to a few ulps of itself.
///
/// Near a pole `r` is tiny and the naive `k * l` loses all of its digits,
/// so the product and the reduction are both carried in two parts.
pub(crate) fn reduce_phase(k: f64, l: f64) -> (f64, bool) {
    reduce_phase_split(k, 0.0, l)
}

/// As [`reduce_phase`] for `k = k_hi + k_lo` given in two parts.
fn reduce_phase_split(k: f64, k_lo: f64, l: f64) -> (f64, bool) {
    let p = k * l;
    let p_err = k.mul_add(l, -p) + k_lo * l;
    let m = (p / PI_HI).round();
    let a = m * PI_HI;
    let a_err = m.mul_add(PI_HI, -a);
    let r = ((p - a) - a_err) + p_err - m * PI_MID - m * PI_LO;
    (r, m.rem_euclid(2.0) == 1.0)
}

/// `sin(kL)` with the argument reduced exactly.
pub(crate) fn sin_kl(k: f64, l: f64) -> f64 {
    let (r, odd) = reduce_phase(k, l);
    if odd {
        -r.sin()
    } else {
        r.sin()
    }
}

/// `(sin kL, cos kL)` for `k = k_hi + k_lo`, argument reduced exactly.
fn sin_cos_kl_split(k: f64, k_lo: f64, l: f64) -> (f64, f64) {
    let (r, odd) = reduce_phase_split(k, k_lo, l);
    let (s, c) = r.sin_cos();
    if odd {
        (-s, -c)
    } else {
        (s, c)
    }
}

/// `S(k) = Σ_j cot(k L_j)`.
pub fn secular(graph: &StarGraph, k: f64) -> f64 {
    graph
        .arm_lengths()
        .iter()
        .map(|&l| 1.0 / reduce_phase(k, l).0.tan())
        .sum()
}

/// `S(k_hi + k_lo)` for a wavenumber carried in two parts.
pub fn secular_split(graph: &StarGraph, k: f64, k_lo: f64) -> f64 {
    graph
        .arm_lengths()
        .iter()
        .map(|&l| 1.0 / reduce_phase_split(k, k_lo, l).0.tan())
        .sum()
}

/// `S'(k) = -Σ_j L_j / sin²(k L_j)`, strictly negative away from poles.
pub fn secular_derivative(graph: &StarGraph, k: f64) -> f64 {
    graph
        .arm_lengths()
        .iter()
        .map(|&l| {
            let s = reduce_phase(k, l).0.sin();
            -l / (s * s)
        })
        .sum()
}

#[derive(Debug, Clone, Copy)]
struct Pole {
    k: f64,
    arm: usize,
}

/// Poles of `S` in `(0, k_max]` plus the first pole beyond `k_max`, sorted.
fn poles_through(graph: &StarGraph, k_max: f64) -> Vec<Pole> {
    let mut poles = Vec::new();
    let mut next_beyond = f64::INFINITY;
    let mut next_arm = 0;
    for (arm, &l) in graph.arm_lengths().iter().enumerate() {
        let spacing = PI / l;
        let mut m = 1usize;
        loop {
            let k = m as f64 * spacing;
            if k > k_max {
                if k < next_beyond {
                    next_beyond = k;
                    next_arm = arm;
                }
                break;
            }
            poles.push(Pole { k, arm });
            m += 1;
        }
    }
    poles.sort_by(|a, b| a.k.total_cmp(&b.k).then(a.arm.cmp(&b.arm)));
    poles.push(Pole {
        k: next_beyond,
        arm: next_arm,
    });
    poles
}

/// All roots of the secular function in `(0, k_max]`, increasing.
pub fn solve_secular(graph: &StarGraph, k_max: f64) -> Result<Vec<f64>, SpectrumError> {
    Ok(solve_secular_split(graph, k_max)?
        .into_iter()
        .map(|r| r.k)
        .collect())
}

/// A secular root carried beyond double precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    /// Nearest double to the root.
    pub k: f64,
    /// Remainder, `root ≈ k + k_lo`.
    pub k_lo: f64,
    /// `S(k + k_lo)`.
    pub residual: f64,
}

/// As [`solve_secular`], keeping the sub-ulp part of each root.
///
/// Close pole pairs make `|S'|` as large as `1e10`, so even the double
/// nearest a root can leave `|S| ~ 1e-6`. Residuals are therefore measured
/// at the two-part value.
pub fn solve_secular_split(graph: &StarGraph, k_max: f64) -> Result<Vec<Root>, SpectrumError> {
    if !(k_max.is_finite() && k_max > 0.0) {
        return Err(SpectrumError::BadCutoff(k_max));
    }
    let poles = poles_through(graph, k_max);
    for w in poles.windows(2) {
        let gap = w[1].k - w[0].k;
        if w[0].arm != w[1].arm && gap < POLE_COLLISION_GUARD {
            return Err(SpectrumError::PoleCollision {
                k: w[0].k,
                arm_a: w[0].arm,
                arm_b: w[1].arm,
                gap,
            });
        }
    }

    let mut roots = Vec::with_capacity(poles.len());
    let mut lo = 0.0;
    for pole in &poles {
        let hi = pole.k;
        // The last bracket straddles k_max; its root counts only if S(k_max) <= 0.
        if hi > k_max && secular(graph, k_max) > 0.0 {
            break;
        }
        let index = roots.len();
        let root = bracketed_root(graph, lo, hi, index)?;
        if root.k > k_max {
            break;
        }
        roots.push(root);
        lo = hi;
    }

    let weyl = k_max * graph.total_length() / PI;
    let slack = graph.arm_count() as f64;
    if (roots.len() as f64 - weyl).abs() > slack {
        return Err(SpectrumError::CountMismatch {
            found: roots.len(),
            weyl,
            arms: graph.arm_count(),
        });
    }
    Ok(roots)
}

fn bracketed_root(
    graph: &StarGraph,
    mut lo: f64,
    mut hi: f64,
    index: usize,
) -> Result<Root, SpectrumError> {
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        if secular(graph, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut k = 0.5 * (lo + hi);
    let mut escaped = false;
    for _ in 0..MAX_NEWTON_STEPS {
        let s = secular(graph, k);
        if s == 0.0 {
            break;
        }
        let next = k - s / secular_derivative(graph, k);
        if !(next > lo && next < hi) {
            escaped = true;
            break;
        }
        if next == k {
            break;
        }
        k = next;
    }
    if escaped {
        // Finish by bisection to the ulp.
        let (mut a, mut b) = (lo, hi);
        loop {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if secular(graph, mid) > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        k = if secular(graph, a).abs() <= secular(graph, b).abs() {
            a
        } else {
            b
        };
    }

    // Sub-ulp polish; S is nearly linear over one ulp.
    let mut k_lo = 0.0;
    for _ in 0..2 {
        let s = secular_split(graph, k, k_lo);
        if s == 0.0 {
            break;
        }
        let corrected = k_lo - s / secular_derivative(graph, k);
        let sum = k + corrected;
        k_lo = corrected - (sum - k);
        k = sum;
    }
    let residual = secular_split(graph, k, k_lo);
    if !(residual.abs() < SECULAR_RESIDUAL_TOL) {
        return Err(SpectrumError::RootResidual {
            index,
            k,
            residual: residual.abs(),
        });
    }
    Ok(Root { k, k_lo, residual })
}

/// Normalization `B_n` making `Σ_j ∫_0^{L_j} ψ_{j,n}² dx = 1`.
///
/// Uses `∫_0^L sin²(k u) du = L/2 - sin(2kL)/(4k)`.
pub fn normalization(graph: &StarGraph, k: f64) -> Result<f64, SpectrumError> {
    normalization_split(graph, k, 0.0)
}

fn normalization_split(graph: &StarGraph, k: f64, k_lo: f64) -> Result<f64, SpectrumError> {
    let mut inv_sq = 0.0;
    for (arm, &l) in graph.arm_lengths().iter().enumerate() {
        let (r, _) = reduce_phase_split(k, k_lo, l);
        let s = r.sin();
        if s.abs() <= SIN_GUARD {
            return Err(SpectrumError::SinGuard {
                k,
                arm,
                value: s.abs(),
            });
        }
        inv_sq += (l - (2.0 * r).sin() / (2.0 * k)) / (2.0 * s * s);
    }
    Ok(inv_sq.sqrt().recip())
}

/// Truncated orthonormal eigenbasis of the potential-free star graph.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    graph: StarGraph,
    k: Vec<f64>,
    b: Vec<f64>,
    /// Sub-ulp parts of the roots. Amplitudes and pointwise values use
    /// `k + k_lo`; near a pole `1/sin(kL)` is sensitive to it, while the
    /// smooth integrals in the coupling matrices are not.
    k_lo: Vec<f64>,
    residuals: Vec<f64>,
    /// `B_n / sin(k_n L_j)`, row-major `[n][j]`.
    amplitudes: Vec<f64>,
    k_max: f64,
}

impl SpectralBasis {
    pub fn new(graph: StarGraph, k_max: f64) -> Result<Self, SpectrumError> {
        let roots = solve_secular_split(&graph, k_max)?;
        if roots.is_empty() {
            return Err(SpectrumError::Empty(k_max));
        }
        let arms = graph.arm_count();
        let k: Vec<f64> = roots.iter().map(|r| r.k).collect();
        let k_lo: Vec<f64> = roots.iter().map(|r| r.k_lo).collect();
        let residuals = roots.iter().map(|r| r.residual).collect();
        let mut b = Vec::with_capacity(k.len());
        let mut amplitudes = Vec::with_capacity(k.len() * arms);
        for root in &roots {
            let bn = normalization_split(&graph, root.k, root.k_lo)?;
            b.push(bn);
            for &l in graph.arm_lengths() {
                amplitudes.push(bn / sin_cos_kl_split(root.k, root.k_lo, l).0);
            }
        }
        Ok(Self {
            graph,
            k,
            k_lo,
            b,
            residuals,
            amplitudes,
            k_max,
        })
    }

    /// Keeps only the lowest `modes` eigenfunctions.
    pub fn truncated(&self, modes: usize) -> Self {
        let modes = modes.min(self.len()).max(1);
        let arms = self.graph.arm_count();
        Self {
            graph: self.graph.clone(),
            k: self.k[..modes].to_vec(),
            k_lo: self.k_lo[..modes].to_vec(),
            b: self.b[..modes].to_vec(),
            residuals: self.residuals[..modes].to_vec(),
            amplitudes: self.amplitudes[..modes * arms].to_vec(),
            k_max: self.k[modes - 1],
        }
    }

    pub fn graph(&self) -> &StarGraph {
        &self.graph
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.k
    }

    pub fn normalizations(&self) -> &[f64] {
        &self.b
    }

    pub fn secular_residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn k_max(&self) -> f64 {
        self.k_max
    }

    /// `B_n / sin(k_n L_j)`.
    #[inline]
    pub fn amplitude(&self, n: usize, arm: usize) -> f64 {
        self.amplitudes[n * self.graph.arm_count() + arm]
    }

    /// `ψ_{j,n}(x)` for `0 ≤ x ≤ L_j`.
    #[inline]
    pub fn eval(&self, n: usize, arm: usize, x: f64) -> f64 {
        let l = self.graph.arm_length(arm);
        debug_assert!((-1e-12..=l + 1e-12).contains(&x), "x={x} outside arm {arm}");
        self.amplitude(n, arm) * sin_cos_kl_split(self.k[n], self.k_lo[n], l - x).0
    }

    /// `dψ_{j,n}/dx`, outgoing from the vertex.
    #[inline]
    pub fn eval_derivative(&self, n: usize, arm: usize, x: f64) -> f64 {
        let l = self.graph.arm_length(arm);
        -self.amplitude(n, arm) * self.k[n] * sin_cos_kl_split(self.k[n], self.k_lo[n], l - x).1
    }

    /// Values of every mode at the given points of one arm, as a
    /// `points × modes` matrix.
    pub fn sample_arm(&self, arm: usize, xs: &[f64]) -> DMatrix<f64> {
        let l = self.graph.arm_length(arm);
        DMatrix::from_fn(xs.len(), self.len(), |p, n| {
            self.amplitude(n, arm) * (self.k[n] * (l - xs[p])).sin()
        })
    }
}

/// Composite Gauss–Legendre nodes on one arm with at least
/// `points_per_wavelength` nodes per wavelength `2π/wavenumber`.
pub(crate) fn arm_nodes(
    rule: &GaussLegendre,
    length: f64,
    wavenumber: f64,
    points_per_wavelength: f64,
) -> (Vec<f64>, Vec<f64>) {
    let nodes_needed = length * wavenumber / (2.0 * PI) * points_per_wavelength;
    let panels = (nodes_needed / rule.len() as f64).ceil().max(1.0) as usize;
    rule.composite_nodes(0.0, length, panels)
}

/// `max_{m,n} |Σ_j ∫ ψ_{j,m} ψ_{j,n} dx - δ_{mn}|` by composite
/// Gauss–Legendre quadrature with the given node density per shortest
/// wavelength `2π/k_max`.
pub fn orthonormality_defect(basis: &SpectralBasis, points_per_wavelength: f64) -> f64 {
    assert!(
        points_per_wavelength >= 8.0,
        "need at least 8 points per wavelength"
    );
    let rule = GaussLegendre::new(16);
    let n = basis.len();
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for arm in 0..basis.graph().arm_count() {
        let (xs, ws) = arm_nodes(
            &rule,
            basis.graph().arm_length(arm),
            basis.k_max(),
            points_per_wavelength,
        );
        let mut phi = basis.sample_arm(arm, &xs);
        for (mut row, w) in phi.row_iter_mut().zip(&ws) {
            row *= w.sqrt();
        }
        gram += phi.tr_mul(&phi);
    }
    for i in 0..n {
        gram[(i, i)] -= 1.0;
    }
    gram.amax()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(ls: &[f64]) -> StarGraph {
        StarGraph::new(ls.to_vec()).unwrap()
    }

    #[test]
    fn single_arm_roots_are_half_integers() {
        let roots = solve_secular(&graph(&[1.0]), 5.0).unwrap();
        assert_eq!(roots.len(), 2);
        assert!((roots[0] - PI / 2.0).abs() < 1e-12);
        assert!((roots[1] - 1.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn two_arm_first_root_is_pi_over_three() {
        let roots = solve_secular(&graph(&[1.0, 2.0]), 1.2).unwrap();
        assert_eq!(roots.len(), 1);
        assert!((roots[0] - PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_arm_normalization_is_sqrt_two() {
        let b = normalization(&graph(&[1.0]), PI / 2.0).unwrap();
        assert!((b - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn pole_collision_is_rejected() {
        let err = solve_secular(&graph(&[1.0, 2.0]), 4.0).unwrap_err();
        assert!(
            matches!(err, SpectrumError::PoleCollision { .. }),
            "{err:?}"
        );
    }

    #[test]
    fn sin_guard_trips_on_a_pole() {
        let err = normalization(&graph(&[1.0, 2.0]), PI).unwrap_err();
        assert!(matches!(err, SpectrumError::SinGuard { .. }));
    }

    #[test]
    fn bad_cutoff() {
        assert_eq!(
            solve_secular(&graph(&[1.0]), 0.0),
            Err(SpectrumError::BadCutoff(0.0))
        );
        assert!(matches!(
            SpectralBasis::new(graph(&[1.0]), 1.0),
            Err(SpectrumError::Empty(_))
        ));
    }

    #[test]
    fn dirichlet_and_vertex_conditions() {
        let basis = SpectralBasis::new(StarGraph::default_three_arm(), 6.0).unwrap();
        for n in 0..basis.len() {
            let mut deriv_sum = 0.0;
            let v0 = basis.eval(n, 0, 0.0);
            for arm in 0..3 {
                let l = basis.graph().arm_length(arm);
                assert!(basis.eval(n, arm, l).abs() < 1e-12);
                assert!((basis.eval(n, arm, 0.0) - v0).abs() < 1e-12);
                deriv_sum += basis.eval_derivative(n, arm, 0.0);
            }
            let scale = basis.wavenumbers()[n] * basis.normalizations()[n];
            assert!(
                deriv_sum.abs() < 1e-8 * scale,
                "n={n} kirchhoff defect {deriv_sum:e}"
            );
        }
    }

    #[test]
    fn truncation_keeps_lowest_modes() {
        let basis = SpectralBasis::new(graph(&[1.0, 2f64.sqrt()]), 20.0).unwrap();
        let t = basis.truncated(3);
        assert_eq!(t.len(), 3);
        assert_eq!(t.wavenumbers(), &basis.wavenumbers()[..3]);
        assert_eq!(t.amplitude(2, 1), basis.amplitude(2, 1));
    }
}

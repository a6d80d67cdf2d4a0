//! Side-by-side comparison of the textbook closed forms as usually printed,
//! the forms implemented here, and direct quadrature.

use serde::Serialize;

use crate::coupling::{cosine_integral, position_integral, scaled_error};
use crate::quadrature::{GaussLegendre, QuadratureError};
use crate::spectrum::{sin_kl, SpectralBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditQuantity {
    /// Normalization `B_n`.
    Normalization,
    /// `∫ x sin²[k_n(L-x)] dx`.
    PositionDiagonal,
    /// `∫ x sin[k_n(L-x)] sin[k_m(L-x)] dx`, `n ≠ m`.
    PositionOffDiagonal,
    /// `∫ cos(ω_d x) sin[k_n(L-x)] sin[k_m(L-x)] dx`.
    Cosine,
}

impl AuditQuantity {
    pub fn label(self) -> &'static str {
        match self {
            AuditQuantity::Normalization => "B",
            AuditQuantity::PositionDiagonal => "A_diag",
            AuditQuantity::PositionOffDiagonal => "A_offdiag",
            AuditQuantity::Cosine => "IV",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditRow {
    pub quantity: AuditQuantity,
    /// Zero-based; `None` for quantities summed over arms.
    pub arm: Option<usize>,
    pub n: usize,
    pub m: usize,
    pub printed: f64,
    pub implemented: f64,
    pub oracle: f64,
}

impl AuditRow {
    pub fn printed_error(&self) -> f64 {
        scaled_error(self.printed, self.oracle)
    }

    pub fn implemented_error(&self) -> f64 {
        scaled_error(self.implemented, self.oracle)
    }
}

/// `[Σ_j (L_j + sin 2kL_j) / sin²(kL_j) / 2]^{-1/2}`.
pub fn printed_normalization(lengths: &[f64], k: f64) -> f64 {
    let s: f64 = lengths
        .iter()
        .map(|&l| (l + (2.0 * k * l).sin()) / sin_kl(k, l).powi(2))
        .sum();
    (0.5 * s).sqrt().recip()
}

/// `L²/2 − (1 − cos 2kL)/(4k²)`.
pub fn printed_position_diagonal(k: f64, l: f64) -> f64 {
    0.5 * l * l - (1.0 - (2.0 * k * l).cos()) / (4.0 * k * k)
}

/// `(1 − cos 2(a−b)L)/(a−b)² − (1 − cos 2(a+b)L)/(a+b)²`.
pub fn printed_position_off_diagonal(a: f64, b: f64, l: f64) -> f64 {
    let term = |c: f64| (1.0 - (2.0 * c * l).cos()) / (c * c);
    term(a - b) - term(a + b)
}

/// The four-fraction cosine expression, with the `1/4` prefactor.
pub fn printed_cosine(a: f64, b: f64, l: f64, w: f64) -> f64 {
    let sw = (w * l).sin();
    let (d, s) = (a - b, a + b);
    let (sd, ss) = ((d * l).sin(), (s * l).sin());
    0.25 * ((sw + sd) / (w + d) + (sw - sd) / (w - d) - (sw + ss) / (w + s) - (sw - ss) / (w - s))
}

/// Audits the modes in `modes` on every arm.
pub fn formula_audit(
    basis: &SpectralBasis,
    lattice_wavenumber: f64,
    modes: &[usize],
) -> Result<Vec<AuditRow>, QuadratureError> {
    let rule = GaussLegendre::new(16);
    let k = basis.wavenumbers();
    let lengths = basis.graph().arm_lengths();
    let integrate = |f: &dyn Fn(f64) -> f64, l: f64, kappa: f64, scale: f64| {
        let panels = (l * kappa / std::f64::consts::PI).ceil().max(1.0) as usize;
        rule.integrate_adaptive(f, 0.0, l, panels, 1e-13, scale)
    };
    let mut rows = Vec::new();
    for &n in modes {
        let kn = k[n];
        let mut inv_sq = 0.0;
        for &l in lengths {
            let s = sin_kl(kn, l);
            inv_sq += integrate(&|x| ((kn * (l - x)).sin() / s).powi(2), l, kn, l)?;
        }
        rows.push(AuditRow {
            quantity: AuditQuantity::Normalization,
            arm: None,
            n,
            m: n,
            printed: printed_normalization(lengths, kn),
            implemented: basis.normalizations()[n],
            oracle: inv_sq.sqrt().recip(),
        });
    }
    for (arm, &l) in lengths.iter().enumerate() {
        for &n in modes {
            for &m in modes {
                if m < n {
                    continue;
                }
                let (a, b) = (k[n], k[m]);
                let kappa = a.max(b);
                let product = move |x: f64| (a * (l - x)).sin() * (b * (l - x)).sin();
                let oracle = integrate(&|x| x * product(x), l, kappa, l * l)?;
                rows.push(AuditRow {
                    quantity: if n == m {
                        AuditQuantity::PositionDiagonal
                    } else {
                        AuditQuantity::PositionOffDiagonal
                    },
                    arm: Some(arm),
                    n,
                    m,
                    printed: if n == m {
                        printed_position_diagonal(a, l)
                    } else {
                        printed_position_off_diagonal(a, b, l)
                    },
                    implemented: position_integral(a, b, l),
                    oracle,
                });
                let w = lattice_wavenumber;
                let oracle = integrate(&|x| (w * x).cos() * product(x), l, kappa.max(w), l)?;
                rows.push(AuditRow {
                    quantity: AuditQuantity::Cosine,
                    arm: Some(arm),
                    n,
                    m,
                    printed: printed_cosine(a, b, l, w),
                    implemented: cosine_integral(a, b, l, w),
                    oracle,
                });
            }
        }
    }
    Ok(rows)
}

/// Default audit modes: the first three plus two spread through the basis.
pub fn default_audit_modes(len: usize) -> Vec<usize> {
    let mut modes: Vec<usize> = vec![0, 1, 2, len / 3, (2 * len) / 3];
    modes.retain(|&m| m < len);
    modes.sort_unstable();
    modes.dedup();
    modes
}

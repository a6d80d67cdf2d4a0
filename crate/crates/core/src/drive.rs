//! Per-arm external fields `F_j(t)` and the time-dependent Hamiltonian terms
//! they produce.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{CouplingError, LatticePotentialSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DriveError {
    #[error("drive lists {given} arm laws but the graph has {arms} arms")]
    ArmCount { given: usize, arms: usize },
    #[error("sinusoidal drives need a shared omega > 0 (got {0:?})")]
    MissingOmega(Option<f64>),
    #[error("non-finite drive parameter on arm {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Potential(#[from] CouplingError),
}

/// Field law of a single arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldLaw {
    /// `F_j(t) = strength`.
    Constant { strength: f64 },
    /// `F_j(t) = strength · sin(ω t + phase)` with the shared `ω`.
    Sinusoidal {
        strength: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl FieldLaw {
    pub fn strength(&self) -> f64 {
        match *self {
            FieldLaw::Constant { strength } | FieldLaw::Sinusoidal { strength, .. } => strength,
        }
    }
}

/// Everything time-dependent in the Hamiltonian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSpec {
    /// Shared angular frequency of every sinusoidal arm law.
    #[serde(default)]
    pub omega: Option<f64>,
    pub arms: Vec<FieldLaw>,
    pub potential: LatticePotentialSpec,
}

/// A scalar time law multiplying one Hamiltonian term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeLaw {
    Constant,
    /// `sin(omega t + phase)`.
    Sine {
        omega: f64,
        phase: f64,
    },
}

impl TimeLaw {
    #[inline]
    pub fn eval(self, t: f64) -> f64 {
        match self {
            TimeLaw::Constant => 1.0,
            TimeLaw::Sine { omega, phase } => (omega * t + phase).sin(),
        }
    }
}

/// Which precomputed matrix a term component refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    /// Unit-amplitude lattice cosine.
    Lattice,
    /// Position operator of one arm.
    Position(usize),
}

/// `law(t) · Σ weight · operator`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveTerm {
    pub law: TimeLaw,
    pub components: Vec<(Operator, f64)>,
}

/// Time-independent part of the potential, excluding the kinetic diagonal:
/// `v0 · lattice + offset + Σ_j constant_j · X_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticPart {
    pub v0: f64,
    pub offset: f64,
    pub constant_fields: Vec<f64>,
}

impl StaticPart {
    pub fn components(&self) -> Vec<(Operator, f64)> {
        let mut out = Vec::new();
        if self.v0 != 0.0 {
            out.push((Operator::Lattice, self.v0));
        }
        for (j, &f) in self.constant_fields.iter().enumerate() {
            if f != 0.0 {
                out.push((Operator::Position(j), f));
            }
        }
        out
    }
}

impl DriveSpec {
    pub fn validate(&self, arm_count: usize) -> Result<(), DriveError> {
        self.potential.validate()?;
        if self.arms.len() != arm_count {
            return Err(DriveError::ArmCount {
                given: self.arms.len(),
                arms: arm_count,
            });
        }
        let any_sin = self
            .arms
            .iter()
            .any(|a| matches!(a, FieldLaw::Sinusoidal { .. }));
        if any_sin && !matches!(self.omega, Some(w) if w.is_finite() && w > 0.0) {
            return Err(DriveError::MissingOmega(self.omega));
        }
        for (j, law) in self.arms.iter().enumerate() {
            let ok = match *law {
                FieldLaw::Constant { strength } => strength.is_finite(),
                FieldLaw::Sinusoidal { strength, phase } => {
                    strength.is_finite() && phase.is_finite()
                }
            };
            if !ok {
                return Err(DriveError::NonFinite(j));
            }
        }
        Ok(())
    }

    /// `F_j(t)`.
    pub fn field(&self, arm: usize, t: f64) -> f64 {
        match self.arms[arm] {
            FieldLaw::Constant { strength } => strength,
            FieldLaw::Sinusoidal { strength, phase } => {
                strength * (self.omega.unwrap_or(0.0) * t + phase).sin()
            }
        }
    }

    /// Largest field amplitude `max_j |f_j|`.
    pub fn reference_strength(&self) -> f64 {
        self.arms
            .iter()
            .map(|a| a.strength().abs())
            .fold(0.0, f64::max)
    }

    pub fn static_part(&self) -> StaticPart {
        StaticPart {
            v0: self.potential.v0,
            offset: self.potential.offset,
            constant_fields: self
                .arms
                .iter()
                .map(|a| match *a {
                    FieldLaw::Constant { strength } => strength,
                    FieldLaw::Sinusoidal { .. } => 0.0,
                })
                .collect(),
        }
    }

    /// Time-dependent terms. Sinusoidal arm laws collapse onto at most two
    /// terms, `sin(ωt)` and `cos(ωt)`, since
    /// `f sin(ωt + φ) = f cos φ · sin ωt + f sin φ · cos ωt`.
    pub fn dynamic_terms(&self) -> Vec<DriveTerm> {
        let mut terms = Vec::new();
        if let Some(omega) = self.omega {
            let mut sine = Vec::new();
            let mut cosine = Vec::new();
            for (j, law) in self.arms.iter().enumerate() {
                if let FieldLaw::Sinusoidal { strength, phase } = *law {
                    let (s, c) = phase.sin_cos();
                    if strength * c != 0.0 {
                        sine.push((Operator::Position(j), strength * c));
                    }
                    if strength * s != 0.0 {
                        cosine.push((Operator::Position(j), strength * s));
                    }
                }
            }
            if !sine.is_empty() {
                terms.push(DriveTerm {
                    law: TimeLaw::Sine { omega, phase: 0.0 },
                    components: sine,
                });
            }
            if !cosine.is_empty() {
                terms.push(DriveTerm {
                    law: TimeLaw::Sine {
                        omega,
                        phase: std::f64::consts::FRAC_PI_2,
                    },
                    components: cosine,
                });
            }
        }
        if let Some(m) = self.potential.modulation {
            let w = -m.depth * self.potential.v0;
            if w != 0.0 {
                terms.push(DriveTerm {
                    law: TimeLaw::Sine {
                        omega: m.omega,
                        phase: m.phase,
                    },
                    components: vec![(Operator::Lattice, w)],
                });
            }
        }
        terms
    }

    /// Drive whose Hamiltonian at time `s` equals this one's at `total - s`.
    ///
    /// `sin(ω(T - s) + φ) = sin(ωs + π - ωT - φ)`.
    pub fn time_reversed(&self, total: f64) -> Self {
        let flip = |omega: f64, phase: f64| std::f64::consts::PI - omega * total - phase;
        let mut out = self.clone();
        if let Some(omega) = self.omega {
            for law in &mut out.arms {
                if let FieldLaw::Sinusoidal { phase, .. } = law {
                    *phase = flip(omega, *phase);
                }
            }
        }
        if let Some(m) = &mut out.potential.modulation {
            m.phase = flip(m.omega, m.phase);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::PotentialModulation;
    use std::f64::consts::PI;

    fn spec() -> DriveSpec {
        let mut potential = LatticePotentialSpec::new(2.0, 1.0).unwrap();
        potential.modulation = Some(PotentialModulation {
            depth: 0.5,
            omega: 0.7,
            phase: 0.3,
        });
        DriveSpec {
            omega: Some(0.2),
            arms: vec![
                FieldLaw::Sinusoidal {
                    strength: 0.3,
                    phase: 0.0,
                },
                FieldLaw::Sinusoidal {
                    strength: -0.3,
                    phase: PI / 2.0,
                },
                FieldLaw::Constant { strength: 0.1 },
            ],
            potential,
        }
    }

    #[test]
    fn terms_reproduce_fields() {
        let d = spec();
        let terms = d.dynamic_terms();
        for &t in &[0.0, 1.3, 17.0] {
            for arm in 0..3 {
                let mut f = d.static_part().constant_fields[arm];
                for term in &terms {
                    for &(op, w) in &term.components {
                        if op == Operator::Position(arm) {
                            f += w * term.law.eval(t);
                        }
                    }
                }
                assert!((f - d.field(arm, t)).abs() < 1e-15);
            }
            let mut v = d.static_part().v0;
            for term in &terms {
                for &(op, w) in &term.components {
                    if op == Operator::Lattice {
                        v += w * term.law.eval(t);
                    }
                }
            }
            assert!((v - d.potential.amplitude(t)).abs() < 1e-14);
        }
    }

    #[test]
    fn time_reversal_mirrors_fields() {
        let d = spec();
        let total = 9.4;
        let r = d.time_reversed(total);
        for &s in &[0.0, 2.2, 9.4] {
            for arm in 0..3 {
                assert!((r.field(arm, s) - d.field(arm, total - s)).abs() < 1e-14);
            }
            assert!((r.potential.amplitude(s) - d.potential.amplitude(total - s)).abs() < 1e-13);
        }
    }

    #[test]
    fn validation() {
        let mut d = spec();
        assert!(d.validate(3).is_ok());
        assert_eq!(
            d.validate(2),
            Err(DriveError::ArmCount { given: 3, arms: 2 })
        );
        d.omega = None;
        assert_eq!(d.validate(3), Err(DriveError::MissingOmega(None)));
    }

    #[test]
    fn serde_shape() {
        let law: FieldLaw = serde_json::from_str(r#"{"law":"sinusoidal","strength":0.5}"#).unwrap();
        assert_eq!(
            law,
            FieldLaw::Sinusoidal {
                strength: 0.5,
                phase: 0.0
            }
        );
        let law: FieldLaw = serde_json::from_str(r#"{"law":"constant","strength":-0.2}"#).unwrap();
        assert_eq!(law.strength(), -0.2);
    }
}

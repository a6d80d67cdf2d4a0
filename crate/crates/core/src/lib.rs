//! Spectral-Galerkin dynamics of Gaussian wave packets on driven quantum star graphs.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod audit;
pub mod coupling;
pub mod drive;
pub mod graph;
pub(crate) mod kernels;
pub mod propagator;
pub mod quadrature;
pub mod scenario;
pub mod spectrum;

use std::path::PathBuf;

use thiserror::Error;

pub use analysis::{AnalysisError, BandProjector, BlochObservables, SweepResult, WidthFit};
pub use coupling::{
    CouplingError, CouplingSet, LatticePotentialSpec, PotentialModulation, VerifyMode,
};
pub use drive::{DriveError, DriveSpec, FieldLaw};
pub use graph::{GraphError, StarGraph};
pub use propagator::{
    init_gaussian, partial_norms, DensityGrid, Frame, FrameKind, GaussianPacket, Propagator,
    PropagatorError, Tolerances, WaveState,
};
pub use scenario::{preset, run, Command, ConfigError, RunConfig, RunManifest, RunOptions};
pub use spectrum::{SpectralBasis, SpectrumError};

/// Any failure of a run, grouped by the exit code it maps to.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Drive(#[from] DriveError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Propagator(#[from] PropagatorError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    /// 2 for configuration, 3 for numerical failures, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Graph(_) | Error::Drive(_) => 2,
            Error::Coupling(e)
                if !matches!(
                    e,
                    CouplingError::OracleMismatch { .. } | CouplingError::Quadrature(_)
                ) =>
            {
                2
            }
            Error::Propagator(
                PropagatorError::SupportViolation { .. }
                | PropagatorError::BadPacket(_)
                | PropagatorError::GridTooCoarse(_)
                | PropagatorError::Drive(_),
            ) => 2,
            Error::Spectrum(SpectrumError::BadCutoff(_)) => 2,
            Error::Analysis(AnalysisError::NotSinusoidal(_) | AnalysisError::BadGrid(_)) => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }
}

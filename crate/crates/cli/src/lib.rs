//! Pipeline behind the `cattomo` binary: config resolution, the four stages
//! and their output files. Everything is computed in memory first and written
//! at the end, so a failing run leaves no partial output.

pub mod args;
pub mod pipeline;

use thiserror::Error;

pub use args::{Cli, Command, ConfigArgs, Mode};
pub use pipeline::{
    reconstruct, resolve_config, simulate, theory, write_artifacts, Artifact, Reconstruction,
    ReconstructionSummary, TheorySummary,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_OTHER: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_CONVERGENCE: u8 = 3;
pub const EXIT_DATA: u8 = 4;
pub const EXIT_IO: u8 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] cattomo_core::Error),
    #[error("config: {0}")]
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use cattomo_core::Error as E;
        match self {
            CliError::Config(_) => EXIT_VALIDATION,
            CliError::Core(e) => match e {
                E::InvalidParameter(_) | E::EfficiencyBelowBound(_) => EXIT_VALIDATION,
                E::NonConvergent { .. } | E::KernelRange(_) | E::GridCoverage { .. } => EXIT_CONVERGENCE,
                E::InsufficientData(_)
                | E::MissingBins { .. }
                | E::NegligibleReadout { .. }
                | E::Format(_)
                | E::Json(_) => EXIT_DATA,
                E::Io(_) => EXIT_IO,
                E::NegativeDensity { .. } | E::Undefined(_) => EXIT_OTHER,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

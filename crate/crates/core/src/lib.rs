// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cat;
pub mod config;
pub mod error;
pub mod fock;
pub mod formats;
pub mod numeric;
pub mod observables;
pub mod sim;
pub mod tomo;
pub mod wigner;

pub use config::{ExperimentConfig, PhaseSchedule};
pub use error::{Error, Result};
pub use fock::{DensityMatrix, FockVector};
pub use num_complex::Complex64 as C64;
pub use sim::{HomodyneRecord, RunManifest};
pub use tomo::{CompensationWeights, TomogramEstimate};

//! Experiment configuration shared by the simulator, the reconstruction and the CLI.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cat::SchemeParams;
use crate::error::{Error, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseSchedule {
    /// `phi_i = i pi / phases`.
    #[default]
    Even,
    /// `phases` phases drawn uniformly from `[0, pi)` with the run seed.
    Random,
}

/// Every physical and numerical knob of one run.
///
/// Defaults: `eta_d = 0.3`, `eta_h = 0.8`, `r = r_s = 0.4`, target cat `k = 2`,
/// with sample counts small enough to run on a laptop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Parametric gain of the two-mode amplifier.
    pub r: f64,
    /// Gain of the degenerate amplifier on the signal.
    pub r_s: f64,
    /// Readout photodetector efficiency.
    pub eta_d: f64,
    /// Homodyne detector efficiency.
    pub eta_h: f64,
    /// Target cat index (readout count to reconstruct).
    pub k: usize,
    /// Photon-number truncation for exact states.
    pub n_max: usize,
    /// Dimension of the reconstructed density matrices.
    pub dim: usize,
    pub phases: usize,
    pub samples_per_phase: usize,
    pub seed: u64,
    pub phase_schedule: PhaseSchedule,
    /// Keep only heralded events (`n_r >= k`); otherwise every readout trial
    /// produces a record.
    pub heralded: bool,
    /// Truncation tolerance of the compensation series.
    pub weight_tolerance: f64,
    /// Largest compensation weight that may fall on empty readout bins.
    pub missing_weight_tolerance: f64,
    pub quadrature_points: usize,
    pub quadrature_extent: f64,
    pub wigner_points: usize,
    pub wigner_extent: f64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            r: 0.4,
            r_s: 0.4,
            eta_d: 0.3,
            eta_h: 0.8,
            k: 2,
            n_max: 40,
            dim: 10,
            phases: 70,
            samples_per_phase: 10_000,
            seed: 1997,
            phase_schedule: PhaseSchedule::Even,
            heralded: true,
            weight_tolerance: 1e-4,
            missing_weight_tolerance: 5e-2,
            quadrature_points: 50,
            quadrature_extent: 3.0,
            wigner_points: 121,
            wigner_extent: 3.0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!(
                "unsupported config schema {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.eta_h > 0.5 && self.eta_h <= 1.0) {
            return Err(Error::EfficiencyBelowBound(self.eta_h));
        }
        if !(self.eta_d > 0.0 && self.eta_d <= 1.0) {
            return bad(format!("eta_d = {} outside (0, 1]", self.eta_d));
        }
        if !(self.r >= 0.0 && self.r <= 2.0) {
            return bad(format!("r = {} outside [0, 2]", self.r));
        }
        if !(self.r_s >= 0.0 && self.r_s <= 2.0) {
            return bad(format!("r_s = {} outside [0, 2]", self.r_s));
        }
        if self.n_max < 2 || self.n_max > 400 {
            return bad(format!("n_max = {} outside [2, 400]", self.n_max));
        }
        if self.dim == 0 || self.dim > self.n_max + 1 {
            return bad(format!("dim = {} must lie in [1, n_max + 1]", self.dim));
        }
        if self.k > self.n_max {
            return bad(format!("k = {} exceeds n_max", self.k));
        }
        if self.phases == 0 {
            return bad("phases must be positive".into());
        }
        if 2 * self.phases <= 2 * (self.dim - 1) {
            return bad(format!(
                "{} phases cannot resolve coherences of a dimension-{} reconstruction",
                self.phases, self.dim
            ));
        }
        if self.samples_per_phase == 0 {
            return bad("samples_per_phase must be positive".into());
        }
        if !(self.weight_tolerance > 0.0 && self.weight_tolerance < 1.0) {
            return bad(format!("weight_tolerance = {} outside (0, 1)", self.weight_tolerance));
        }
        if !(self.missing_weight_tolerance >= 0.0) {
            return bad("missing_weight_tolerance must be >= 0".into());
        }
        if self.quadrature_points < 3 || !(self.quadrature_extent > 0.0) {
            return bad("quadrature grid needs >= 3 points and a positive extent".into());
        }
        if self.wigner_points < 2 || !(self.wigner_extent > 0.0) {
            return bad("Wigner grid needs >= 2 points and a positive extent".into());
        }
        Ok(())
    }

    pub fn scheme(&self) -> Result<SchemeParams> {
        SchemeParams::new(self.r, self.r_s, self.eta_d, self.n_max)
    }

    /// Smallest readout count that produces a record.
    pub fn herald_min(&self) -> usize {
        if self.heralded {
            self.k
        } else {
            0
        }
    }

    pub fn total_records(&self) -> usize {
        self.phases * self.samples_per_phase
    }

    /// The config as a TOML document.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

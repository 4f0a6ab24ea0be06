use std::path::PathBuf;

use cattomo_core::PhaseSchedule;
use clap::{Args, Parser, Subcommand, ValueEnum};

use cattomo_core::formats::ReconstructionMode;

/// Output directory override; the only setting read from the environment.
pub const OUTPUT_DIR_ENV: &str = "CATTOMO_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "cattomo", version, about = "Conditional cat states, homodyne simulation and compensated tomography")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub config: ConfigArgs,

    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact states, readout law, compensation weights, theory curves and Wigner grids.
    Theory,
    /// Simulated homodyne records and their manifest.
    Simulate,
    /// Estimate the density matrix from a record file.
    Reconstruct {
        /// Record file (default: <output_dir>/records.csv).
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Compensated)]
        mode: Mode,
    },
    /// Rebuild the reports of an estimate file.
    Report {
        #[arg(long)]
        estimate: PathBuf,
        /// Records for the raw histogram (plain mode only).
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Print the resolved configuration as TOML.
    Config,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Plain,
    Compensated,
}

impl From<Mode> for ReconstructionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Plain => ReconstructionMode::Plain,
            Mode::Compensated => ReconstructionMode::Compensated,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Schedule {
    Even,
    Random,
}

impl From<Schedule> for PhaseSchedule {
    fn from(s: Schedule) -> Self {
        match s {
            Schedule::Even => PhaseSchedule::Even,
            Schedule::Random => PhaseSchedule::Random,
        }
    }
}

/// One flag per config field; unset flags keep the file or default value.
#[derive(Clone, Debug, Default, Args)]
pub struct ConfigArgs {
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub r: Option<f64>,
    #[arg(long, global = true)]
    pub r_s: Option<f64>,
    #[arg(long, global = true)]
    pub eta_d: Option<f64>,
    /// Must exceed 1/2.
    #[arg(long, global = true)]
    pub eta_h: Option<f64>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub n_max: Option<usize>,
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    #[arg(long, global = true)]
    pub phases: Option<usize>,
    #[arg(long, global = true)]
    pub samples_per_phase: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub phase_schedule: Option<Schedule>,
    #[arg(long, global = true)]
    pub heralded: Option<bool>,
    #[arg(long, global = true)]
    pub weight_tolerance: Option<f64>,
    #[arg(long, global = true)]
    pub missing_weight_tolerance: Option<f64>,
    #[arg(long, global = true)]
    pub quadrature_points: Option<usize>,
    #[arg(long, global = true)]
    pub quadrature_extent: Option<f64>,
    #[arg(long, global = true)]
    pub wigner_points: Option<usize>,
    #[arg(long, global = true)]
    pub wigner_extent: Option<f64>,
    #[arg(long, global = true, env = OUTPUT_DIR_ENV)]
    pub output_dir: Option<PathBuf>,
}

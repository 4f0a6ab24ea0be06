use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Photon-number tomography needs a bounded kernel, which only exists for
    /// homodyne efficiency above 1/2.
    #[error("homodyne efficiency {0} must exceed 1/2: the number-basis kernel is unbounded at or below that bound")]
    EfficiencyBelowBound(f64),

    #[error("negative probability density {value:e} at x = {x}")]
    NegativeDensity { x: f64, value: f64 },

    #[error("readout count {n} has negligible probability {prob:e}")]
    NegligibleReadout { n: usize, prob: f64 },

    #[error("kernel out of numeric range: {0}")]
    KernelRange(String),

    #[error("compensation series does not converge: weight ratio {ratio} >= 1")]
    NonConvergent { ratio: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unaccounted compensation weight {missing:e} exceeds tolerance {tolerance:e} (missing bins {bins:?})")]
    MissingBins {
        missing: f64,
        tolerance: f64,
        bins: Vec<usize>,
    },

    #[error("grid captures only {captured} of the probability mass (need {required})")]
    GridCoverage { captured: f64, required: f64 },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

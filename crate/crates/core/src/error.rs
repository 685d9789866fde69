use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Rejection sampling of δ-excursions gave up. `rate` is the empirical
    /// acceptance rate, which is what tells the caller that δ is too large
    /// for the requested length.
    #[error(
        "excursion acceptance failed for tau={tau}, delta={delta}: {accepted} accepted in {attempts} attempts (rate {rate:.3e})"
    )]
    AcceptanceFailure {
        tau: f64,
        delta: f64,
        accepted: usize,
        attempts: usize,
        rate: f64,
    },

    #[error("simulation diverged at t={time}: drift not finite at state {state:?}")]
    Diverged { time: f64, state: Vec<f64> },

    #[error("drift evaluation produced a non-finite value at t={time}, state {state:?}")]
    NonFiniteDrift { time: f64, state: Vec<f64> },

    #[error("boundary not reached before t_max={t_max}")]
    Censored { t_max: f64 },

    #[error("intensity saturated at grid index {index} (t={time}): survival mass exhausted")]
    SaturatedIntensity { index: usize, time: f64 },

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("non-finite gradient for parameter index {index}")]
    NonFiniteGradient { index: usize },

    #[error("objective became non-finite at epoch {epoch}")]
    NonFiniteLoss {
        epoch: usize,
        last_good: Box<crate::inference::FitReport>,
    },

    #[error("undefined norm: {0}")]
    UndefinedNorm(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("drift spec mismatch: expected {expected}, found {found}")]
    SpecMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake-case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Domain(_) => "domain",
            Error::AcceptanceFailure { .. } => "acceptance_failure",
            Error::Diverged { .. } => "diverged",
            Error::NonFiniteDrift { .. } => "non_finite_drift",
            Error::Censored { .. } => "censored",
            Error::SaturatedIntensity { .. } => "saturated_intensity",
            Error::Overflow(_) => "overflow",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::UndefinedNorm(_) => "undefined_norm",
            Error::Checkpoint(_) => "checkpoint",
            Error::SpecMismatch { .. } => "spec_mismatch",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

//! Fitting a drift (and δ) to observed arrival sequences.
//!
//! Each interarrival `tau` is scored by the excursion-length density of the
//! latent diffusion, estimated from `K` Brownian δ-excursions of length `tau`.
//! The loss is the negative mean per-datum objective plus
//! `lambda_reg * max(0, 1 - R)^2`, where `R` is the modelled density's mass
//! on a log-spaced grid. Parameters follow Adam-style updates; δ is updated
//! in log space.

mod checkpoint;
mod optim;
mod problem;

use serde::{Deserialize, Serialize};

use crate::arrivals::{FirstGap, MarkedArrivals};
use crate::drift::{DriftSpec, ParamVector};
use crate::error::{Error, Result};
use crate::excursions::PathLaw;
use crate::rng::RngSeed;

pub use checkpoint::{config_digest, load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use optim::{Adam, AdamConfig};
pub use problem::{BatchRound, Evaluation, Problem, Sampler};

/// Per-datum score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `log p_e + mean_k M_k`, a lower bound on the log-density.
    #[default]
    Elbo,
    /// `log p_e + log mean_k exp(M_k)`.
    LogLikelihood,
}

/// How excursion signs are drawn for scalar data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// `by_mark` for data with marks `{0, 1}`, `random` otherwise.
    #[default]
    Auto,
    /// Fair coin per path.
    Random,
    /// Mark 0 above the reference level, mark 1 below.
    ByMark,
}

/// Which interval a scalar datum spans.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gaps {
    /// Back to the previous arrival with the same mark. A sign-marked
    /// arrival then closes a full return `0 -> ±δ -> 0`, which is Lévy
    /// distributed under zero drift.
    #[default]
    PerMark,
    /// Back to the previous arrival of any mark, so each datum is the single
    /// excursion between consecutive crossings. Suits drifts that reset at
    /// every arrival.
    Sequential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub epochs: usize,
    pub lr_drift: f64,
    pub lr_delta: f64,
    /// Excursions per datum.
    pub k: usize,
    /// Steps per excursion.
    pub n_steps: usize,
    /// Starting height; `None` uses the Lévy scale estimate of the data.
    pub delta_init: Option<f64>,
    pub train_delta: bool,
    pub lambda_reg: f64,
    /// Epochs between batch refreshes; `None` keeps the first batches.
    pub resample_every: Option<usize>,
    pub seed: RngSeed,
    pub optimizer: AdamConfig,
    pub objective: Objective,
    pub signs: SignMode,
    pub first_gap: FirstGap,
    pub gaps: Gaps,
    /// Path law of the per-datum expectations; `None` takes passages for
    /// per-mark gaps and excursions for sequential gaps.
    pub paths: Option<PathLaw>,
    /// Excursions per point of the recurrence-penalty grid.
    pub penalty_k: usize,
    pub penalty_points: usize,
    /// Rejection cap per batch; `None` means `1000 * k`.
    pub max_rejects: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            lr_drift: 1e-3,
            lr_delta: 1e-2,
            k: 128,
            n_steps: 100,
            delta_init: None,
            train_delta: true,
            lambda_reg: 1.0,
            resample_every: Some(1),
            seed: RngSeed::new(0),
            optimizer: AdamConfig::default(),
            objective: Objective::Elbo,
            signs: SignMode::Auto,
            first_gap: FirstGap::Drop,
            gaps: Gaps::PerMark,
            paths: None,
            penalty_k: 32,
            penalty_points: 200,
            max_rejects: None,
        }
    }
}

impl FitConfig {
    /// The path law in effect once `paths` is resolved against `gaps`.
    pub fn path_law(&self) -> PathLaw {
        self.paths.unwrap_or(match self.gaps {
            Gaps::PerMark => PathLaw::Passage,
            Gaps::Sequential => PathLaw::Excursion,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lr_drift", self.lr_drift)?;
        positive("lr_delta", self.lr_delta)?;
        if let Some(d) = self.delta_init {
            positive("delta_init", d)?;
        }
        if self.k == 0 || self.penalty_k == 0 {
            return Err(Error::invalid("excursion counts must be at least 1"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps must be at least 1"));
        }
        if self.penalty_points < 2 {
            return Err(Error::invalid("penalty grid needs at least 2 points"));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(Error::invalid("lambda_reg must be nonnegative"));
        }
        if self.resample_every == Some(0) {
            return Err(Error::invalid("resample_every must be at least 1"));
        }
        self.optimizer.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Objective, penalty and mass at the final parameters.
    pub final_loss: f64,
    pub final_penalty: f64,
    pub recurrence_mass: Option<f64>,
    pub mean_acceptance: f64,
    pub min_acceptance: f64,
    pub failed_penalty_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub loss_history: Vec<f64>,
    pub grad_norm_history: Vec<f64>,
    pub penalty_history: Vec<f64>,
    pub final_params: ParamVector,
    pub final_delta: f64,
    pub diagnostics: FitDiagnostics,
}

impl FitReport {
    /// Writes `epoch,loss,grad_norm,penalty`.
    pub fn write_loss_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "loss", "grad_norm", "penalty"])?;
        for (i, ((l, g), p)) in self
            .loss_history
            .iter()
            .zip(&self.grad_norm_history)
            .zip(&self.penalty_history)
            .enumerate()
        {
            out.write_record([i.to_string(), l.to_string(), g.to_string(), p.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Fits `spec` to `data` with excursion batches.
pub fn fit(data: &[MarkedArrivals], spec: &DriftSpec, config: &FitConfig) -> Result<FitReport> {
    Problem::new(data, spec, config, Sampler::Excursion)?.fit()
}

/// Same loop with unconditioned Brownian bridges in place of excursions.
pub fn fit_baseline_bridge(data: &[MarkedArrivals], spec: &DriftSpec, config: &FitConfig) -> Result<FitReport> {
    Problem::new(data, spec, config, Sampler::Bridge)?.fit()
}

use serde::Serialize;

use super::girsanov::{weight, Times, WeightScratch};
use super::levy::levy_log_density;
use crate::arrivals::Interarrival;
use crate::drift::{Context, DriftFn};
use crate::error::{Error, Result};
use crate::excursions::ExcursionBatch;

/// Monte Carlo estimate of a log-density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogDensityEstimate {
    pub value: f64,
    /// Delta-method standard error of `value`.
    pub std_error: f64,
    pub k: usize,
}

/// `log(mean(exp(w)))` computed stably, with the delta-method standard error
/// of the log of the sample mean. Zero error for a single sample.
pub fn log_mean_exp(w: &[f64]) -> (f64, f64) {
    let k = w.len();
    let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if k == 0 || m == f64::NEG_INFINITY {
        return (f64::NEG_INFINITY, 0.0);
    }
    let scaled: Vec<f64> = w.iter().map(|x| (x - m).exp()).collect();
    let mean = scaled.iter().sum::<f64>() / k as f64;
    let se = if k > 1 {
        let var = scaled.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        var.sqrt() / (k as f64).sqrt() / mean
    } else {
        0.0
    };
    (m + mean.ln(), se)
}

/// Log weights of every path of a batch whose first point sits at `start`.
pub fn log_girsanov_weights(
    drift: &dyn DriftFn,
    batch: &ExcursionBatch,
    start: f64,
    ctx: &Context<'_>,
) -> Result<Vec<f64>> {
    if drift.dim() != 1 {
        return Err(Error::invalid("excursion batches are scalar; drift is not"));
    }
    let times = Times::Uniform { start, dt: batch.dt() };
    let mut scratch = WeightScratch::default();
    batch.paths().map(|p| weight(drift, p, 1, times, ctx, &mut scratch)).collect()
}

fn same_length(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

fn check_batch(tau: f64, batch: &ExcursionBatch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("empty excursion batch"));
    }
    if !same_length(tau, batch.tau()) {
        return Err(Error::invalid(format!(
            "batch has length {}, datum has length {tau}",
            batch.tau()
        )));
    }
    Ok(())
}

fn estimate(tau: f64, delta: f64, drift: &dyn DriftFn, batch: &ExcursionBatch, start: f64, ctx: &Context<'_>) -> Result<LogDensityEstimate> {
    let base = levy_log_density(tau, delta)?;
    let w = log_girsanov_weights(drift, batch, start, ctx)?;
    let (lme, se) = log_mean_exp(&w);
    Ok(LogDensityEstimate {
        value: base + lme,
        std_error: se,
        k: w.len(),
    })
}

/// `log p(tau; delta) + log mean_k exp(M_k)` over a batch of δ-excursions of
/// length `tau` starting at absolute time `start`.
pub fn excursion_log_density(
    tau: f64,
    delta: f64,
    drift: &dyn DriftFn,
    batch: &ExcursionBatch,
    start: f64,
    ctx: &Context<'_>,
) -> Result<LogDensityEstimate> {
    check_batch(tau, batch)?;
    if !same_length(delta, batch.delta()) {
        return Err(Error::invalid(format!(
            "batch was filtered at delta={}, density requested at {delta}",
            batch.delta()
        )));
    }
    estimate(tau, delta, drift, batch, start, ctx)
}

/// Baseline estimator: same log-mean-exp over pinned Brownian bridges,
/// keeping the δ-excursion base density so values are comparable.
pub fn bridge_log_density(
    tau: f64,
    delta: f64,
    drift: &dyn DriftFn,
    bridges: &ExcursionBatch,
    start: f64,
    ctx: &Context<'_>,
) -> Result<LogDensityEstimate> {
    check_batch(tau, bridges)?;
    estimate(tau, delta, drift, bridges, start, ctx)
}

/// Jensen lower bound `sum_i [log p(tau_i; delta) + mean_k M_ik]`, one batch
/// per datum.
pub fn elbo(
    data: &[Interarrival],
    delta: f64,
    drift: &dyn DriftFn,
    batches: &[ExcursionBatch],
    ctx: &Context<'_>,
) -> Result<f64> {
    if data.len() != batches.len() {
        return Err(Error::invalid(format!(
            "{} data but {} batches",
            data.len(),
            batches.len()
        )));
    }
    let mut total = 0.0;
    for (d, b) in data.iter().zip(batches) {
        check_batch(d.duration, b)?;
        let w = log_girsanov_weights(drift, b, d.start, ctx)?;
        total += levy_log_density(d.duration, delta)? + w.iter().sum::<f64>() / w.len() as f64;
    }
    Ok(total)
}

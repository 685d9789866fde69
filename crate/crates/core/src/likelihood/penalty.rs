//! Mass of the modelled excursion-length density on a τ grid, and the
//! recurrence penalty `max(0, 1 - R)^2` built from it.

use rayon::prelude::*;

use super::estimate::excursion_log_density;
use crate::drift::{Context, DriftFn};
use crate::error::{Error, Result};
use crate::excursions::{sample_excursions, sample_passages, ExcursionBatch, PathLaw, SamplerConfig};
use crate::rng::RngSeed;

/// Tail probability that a unit-length Brownian excursion reaches height
/// `h`: `2 sum_k (4 k^2 h^2 - 1) exp(-2 k^2 h^2)`.
pub fn unit_excursion_height_tail(h: f64) -> f64 {
    if h <= 0.0 {
        return 1.0;
    }
    if h < 0.25 {
        // The series converges slowly here and the tail is 1 to ~1e-40.
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let a = 2.0 * (k * k) as f64 * h * h;
        if a > 745.0 {
            break;
        }
        s += 2.0 * (2.0 * a - 1.0) * (-a).exp();
    }
    s.clamp(0.0, 1.0)
}

/// Below this acceptance probability a grid point is treated as carrying no
/// mass instead of being sampled.
const MIN_ACCEPTANCE: f64 = 1e-4;

/// `n_points` log-spaced lengths from `delta^2 / 4` to `10 * max_tau`.
pub fn penalty_tau_grid(delta: f64, max_tau: f64, n_points: usize) -> Result<Vec<f64>> {
    if !(delta > 0.0) || !(max_tau > 0.0) {
        return Err(Error::domain("penalty grid needs positive delta and max_tau"));
    }
    if n_points < 2 {
        return Err(Error::invalid("penalty grid needs at least 2 points"));
    }
    let (lo, hi) = ((0.25 * delta * delta).ln(), (10.0 * max_tau).ln());
    if hi <= lo {
        return Err(Error::invalid("penalty grid upper end must exceed delta^2/4"));
    }
    let h = (hi - lo) / (n_points - 1) as f64;
    Ok((0..n_points).map(|i| (lo + i as f64 * h).exp()).collect())
}

/// Quadrature weights `w_j` with `sum_j w_j f(tau_j) ~ integral f dtau`:
/// the trapezoid rule in `ln tau` applied to `f(tau) tau`.
pub fn log_trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let u: Vec<f64> = grid.iter().map(|t| t.ln()).collect();
    (0..n)
        .map(|j| {
            let left = if j > 0 { u[j] - u[j - 1] } else { 0.0 };
            let right = if j + 1 < n { u[j + 1] - u[j] } else { 0.0 };
            grid[j] * 0.5 * (left + right)
        })
        .collect()
}

/// Density estimates over a τ grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MassEstimate {
    pub mass: f64,
    pub densities: Vec<f64>,
    /// Grid points that contributed zero because δ-excursions of that length
    /// could not be sampled.
    pub failed_points: usize,
}

/// Batch for grid length `tau`, or `None` when acceptance is hopeless or
/// fails. Every point shares `seed`, so the estimates use common random
/// numbers.
pub(crate) fn grid_batch(tau: f64, delta: f64, cfg: &SamplerConfig, seed: RngSeed) -> Result<Option<ExcursionBatch>> {
    if cfg.law == PathLaw::Passage {
        return sample_passages(tau, delta, cfg, seed).map(Some);
    }
    if unit_excursion_height_tail(delta / tau.sqrt()) < MIN_ACCEPTANCE {
        return Ok(None);
    }
    match sample_excursions(tau, delta, cfg, seed) {
        Ok(b) => Ok(Some(b)),
        Err(Error::AcceptanceFailure { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Modelled density at every grid length plus its integral.
pub fn recurrence_mass(
    drift: &dyn DriftFn,
    delta: f64,
    tau_grid: &[f64],
    cfg: &SamplerConfig,
    seed: RngSeed,
) -> Result<MassEstimate> {
    if tau_grid.windows(2).any(|w| w[1] <= w[0]) || tau_grid.first().is_some_and(|&t| t <= 0.0) {
        return Err(Error::invalid("tau grid must be positive and increasing"));
    }
    let dens: Vec<Option<f64>> = tau_grid
        .par_iter()
        .map(|&tau| {
            Ok(match grid_batch(tau, delta, cfg, seed)? {
                Some(b) => Some(excursion_log_density(tau, delta, drift, &b, 0.0, &Context::EMPTY)?.value.exp()),
                None => None,
            })
        })
        .collect::<Result<_>>()?;
    let failed_points = dens.iter().filter(|d| d.is_none()).count();
    let densities: Vec<f64> = dens.into_iter().map(|d| d.unwrap_or(0.0)).collect();
    let mass = log_trapezoid_weights(tau_grid)
        .iter()
        .zip(&densities)
        .map(|(w, p)| w * p)
        .sum();
    Ok(MassEstimate {
        mass,
        densities,
        failed_points,
    })
}

/// `max(0, 1 - R)^2`.
pub fn penalty_from_mass(r: f64) -> f64 {
    (1.0 - r).max(0.0).powi(2)
}

/// `max(0, 1 - R)^2` with `R` from [`recurrence_mass`].
pub fn recurrence_penalty(
    drift: &dyn DriftFn,
    delta: f64,
    tau_grid: &[f64],
    cfg: &SamplerConfig,
    seed: RngSeed,
) -> Result<f64> {
    Ok(penalty_from_mass(recurrence_mass(drift, delta, tau_grid, cfg, seed)?.mass))
}

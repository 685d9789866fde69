//! Density to conditional intensity: `lambda(t_j) = p(t_j) / (1 - sum_{i<j} p(t_i) dt_i)`
//! with `dt_i = t_{i+1} - t_i`. On a grid offset by half a step,
//! `t_i = (i + 1/2) dt`, the sum is the midpoint rule for the CDF at
//! `t_j - dt/2`.

use rayon::prelude::*;

use super::estimate::excursion_log_density;
use super::penalty::grid_batch;
use crate::drift::{Context, DriftFn};
use crate::error::{Error, Result};
use crate::excursions::SamplerConfig;
use crate::rng::RngSeed;

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::invalid("empty time grid"));
    }
    if t_grid[0] <= 0.0 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("time grid must be positive and increasing"));
    }
    Ok(())
}

/// Converts density values on `t_grid` into intensities.
///
/// ```
/// use excursion_pp::likelihood::intensity_from_density;
/// let dt = 1e-3;
/// let t: Vec<f64> = (0..3000).map(|i| (i as f64 + 0.5) * dt).collect();
/// let p: Vec<f64> = t.iter().map(|t| (-t).exp()).collect();
/// let lambda = intensity_from_density(&t, &p).unwrap();
/// assert!(lambda.iter().all(|l| (l - 1.0).abs() < 1e-2));
/// ```
pub fn intensity_from_density(t_grid: &[f64], density: &[f64]) -> Result<Vec<f64>> {
    check_grid(t_grid)?;
    if density.len() != t_grid.len() {
        return Err(Error::invalid("density and grid lengths differ"));
    }
    let mut mass = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    for (j, (&t, &p)) in t_grid.iter().zip(density).enumerate() {
        let survival = 1.0 - mass;
        if survival <= 0.0 {
            return Err(Error::SaturatedIntensity { index: j, time: t });
        }
        out.push(p / survival);
        if let Some(&next) = t_grid.get(j + 1) {
            mass += p * (next - t);
        }
    }
    Ok(out)
}

/// Intensity of the modelled excursion-length law since the last arrival.
/// Every grid length reuses the stream `seed`, so neighbouring densities are
/// estimated with common random numbers. Lengths at which δ-excursions
/// cannot be sampled get density 0.
pub fn conditional_intensity(
    drift: &dyn DriftFn,
    delta: f64,
    t_grid: &[f64],
    cfg: &SamplerConfig,
    seed: RngSeed,
) -> Result<Vec<f64>> {
    check_grid(t_grid)?;
    let density: Vec<f64> = t_grid
        .par_iter()
        .map(|&t| {
            Ok(match grid_batch(t, delta, cfg, seed)? {
                Some(b) => excursion_log_density(t, delta, drift, &b, 0.0, &Context::EMPTY)?.value.exp(),
                None => 0.0,
            })
        })
        .collect::<Result<_>>()?;
    intensity_from_density(t_grid, &density)
}

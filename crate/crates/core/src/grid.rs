use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid: point `i` sits at `t0 + i * dt` for `0 <= i <= n_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if !t0.is_finite() {
            return Err(Error::invalid("grid origin must be finite"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("grid step must be positive, got {dt}")));
        }
        if n_steps == 0 {
            return Err(Error::invalid("grid needs at least one step"));
        }
        Ok(Self { t0, dt, n_steps })
    }

    /// Grid covering `[t0, t0 + horizon]` with step `dt` (the step count is
    /// rounded to the nearest integer, at least one).
    pub fn spanning(t0: f64, horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        let n = (horizon / dt).round().max(1.0) as usize;
        Self::new(t0, dt, n)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_points(&self) -> usize {
        self.n_steps + 1
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.n_steps)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|i| self.time(i))
    }
}

/// Discretely sampled, possibly multi-dimensional path. Values are stored
/// point-major: the state at grid point `i` is `values[i*dim .. (i+1)*dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl Path {
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("path dimension must be at least 1"));
        }
        if values.len() != grid.n_points() * dim {
            return Err(Error::invalid(format!(
                "path has {} values, grid of {} points x dim {} needs {}",
                values.len(),
                grid.n_points(),
                dim,
                grid.n_points() * dim
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("path value {i} is not finite")));
        }
        Ok(Self { grid, dim, values })
    }

    pub fn scalar(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, 1, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.n_points()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn state(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// One coordinate as a contiguous vector.
    pub fn component(&self, k: usize) -> Vec<f64> {
        assert!(k < self.dim, "component {k} out of range for dim {}", self.dim);
        self.values.iter().skip(k).step_by(self.dim).copied().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

//! Discretized Girsanov exponent
//! `M = sum_i mu(e_i, t_i) . (e_{i+1} - e_i) - 1/2 sum_i |mu(e_i, t_i)|^2 (t_{i+1} - t_i)`
//! with the drift evaluated at the left end of every step.

use crate::drift::{Context, Drift, DriftFn, DriftWorkspace};
use crate::error::{Error, Result};
use crate::grid::Path;

/// Absolute times of the points of a discretized path.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Times<'a> {
    Uniform { start: f64, dt: f64 },
    Explicit(&'a [f64]),
}

impl Times<'_> {
    #[inline]
    fn at(&self, i: usize) -> f64 {
        match *self {
            Times::Uniform { start, dt } => start + i as f64 * dt,
            Times::Explicit(t) => t[i],
        }
    }

    #[inline]
    fn step(&self, i: usize) -> f64 {
        match *self {
            Times::Uniform { dt, .. } => dt,
            Times::Explicit(t) => t[i + 1] - t[i],
        }
    }
}

/// Scratch buffers reused across paths.
#[derive(Clone, Debug, Default)]
pub(crate) struct WeightScratch {
    pub ws: DriftWorkspace,
    mu: Vec<f64>,
    upstream: Vec<f64>,
}

fn non_finite(t: f64, x: &[f64]) -> Error {
    Error::NonFiniteDrift {
        time: t,
        state: x.to_vec(),
    }
}

/// `M` for one path stored point-major with `dim` coordinates.
pub(crate) fn weight(
    drift: &dyn DriftFn,
    values: &[f64],
    dim: usize,
    times: Times<'_>,
    ctx: &Context<'_>,
    scratch: &mut WeightScratch,
) -> Result<f64> {
    let n = values.len() / dim - 1;
    scratch.mu.resize(dim, 0.0);
    let mut ito = 0.0;
    let mut quad = 0.0;
    for i in 0..n {
        let x = &values[i * dim..(i + 1) * dim];
        let next = &values[(i + 1) * dim..(i + 2) * dim];
        let t = times.at(i);
        drift.eval(x, t, ctx, &mut scratch.ws, &mut scratch.mu);
        let dt = times.step(i);
        for ((m, a), b) in scratch.mu.iter().zip(x).zip(next) {
            ito += m * (b - a);
            quad += m * m * dt;
        }
        if !(ito.is_finite() && quad.is_finite()) {
            return Err(non_finite(t, x));
        }
    }
    Ok(ito - 0.5 * quad)
}

/// `M` for one path, adding `scale * dM/dparams` into `grad`.
pub(crate) fn weight_grad(
    drift: &Drift<'_>,
    values: &[f64],
    dim: usize,
    times: Times<'_>,
    ctx: &Context<'_>,
    scratch: &mut WeightScratch,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let n = values.len() / dim - 1;
    scratch.mu.resize(dim, 0.0);
    scratch.upstream.resize(dim, 0.0);
    let mut ito = 0.0;
    let mut quad = 0.0;
    for i in 0..n {
        let x = &values[i * dim..(i + 1) * dim];
        let next = &values[(i + 1) * dim..(i + 2) * dim];
        let t = times.at(i);
        drift.forward(x, t, ctx, &mut scratch.ws, &mut scratch.mu);
        let dt = times.step(i);
        for (k, m) in scratch.mu.iter().enumerate() {
            let de = next[k] - x[k];
            ito += m * de;
            quad += m * m * dt;
            // dM/dmu at this step is (de - mu dt).
            scratch.upstream[k] = scale * (de - m * dt);
        }
        if !(ito.is_finite() && quad.is_finite()) {
            return Err(non_finite(t, x));
        }
        if scale != 0.0 {
            drift.backward(&mut scratch.ws, &scratch.upstream, grad);
        }
    }
    Ok(ito - 0.5 * quad)
}

/// Log Girsanov weight of a scalar or vector path whose first point sits
/// at absolute time `start + path.grid().t0()`.
///
/// ```
/// use excursion_pp::drift::{Context, ScalarDrift};
/// use excursion_pp::grid::{Path, TimeGrid};
/// use excursion_pp::likelihood::log_girsanov_weight;
///
/// let path = Path::scalar(TimeGrid::new(0.0, 0.5, 2).unwrap(), vec![0.0, 1.0, 0.0]).unwrap();
/// let m = log_girsanov_weight(&ScalarDrift::new(|x, _| -x), &path, 0.0, &Context::EMPTY).unwrap();
/// assert!((m - 0.75).abs() < 1e-15);
/// ```
pub fn log_girsanov_weight(drift: &dyn DriftFn, path: &Path, start: f64, ctx: &Context<'_>) -> Result<f64> {
    if path.dim() != drift.dim() {
        return Err(Error::invalid(format!(
            "path has dimension {}, drift expects {}",
            path.dim(),
            drift.dim()
        )));
    }
    let times = Times::Uniform {
        start: start + path.grid().t0(),
        dt: path.grid().dt(),
    };
    weight(drift, path.values(), path.dim(), times, ctx, &mut WeightScratch::default())
}

/// Log weight and its gradient with respect to the drift parameters.
pub fn girsanov_weight_gradient(drift: &Drift<'_>, path: &Path, start: f64, ctx: &Context<'_>) -> Result<(f64, Vec<f64>)> {
    if path.dim() != drift.spec.input_dim {
        return Err(Error::invalid("path dimension does not match the drift"));
    }
    let times = Times::Uniform {
        start: start + path.grid().t0(),
        dt: path.grid().dt(),
    };
    let mut grad = vec![0.0; drift.params.len()];
    let m = weight_grad(drift, path.values(), path.dim(), times, ctx, &mut WeightScratch::default(), 1.0, &mut grad)?;
    Ok((m, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{DriftFamily, DriftSpec, ScalarDrift};
    use crate::grid::TimeGrid;

    fn tri() -> Path {
        Path::scalar(TimeGrid::new(0.0, 0.5, 2).unwrap(), vec![0.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn zero_and_constant_drifts() {
        let p = tri();
        assert_eq!(log_girsanov_weight(&ScalarDrift::new(|_, _| 0.0), &p, 0.0, &Context::EMPTY).unwrap(), 0.0);
        let grid = TimeGrid::new(0.0, 0.02, 100).unwrap();
        let mut v: Vec<f64> = (0..=100).map(|i| ((i as f64) * 0.07).sin().abs()).collect();
        v[0] = 0.0;
        v[100] = 0.0;
        let e = Path::scalar(grid, v).unwrap();
        let m = log_girsanov_weight(&ScalarDrift::new(|_, _| 1.0), &e, 0.0, &Context::EMPTY).unwrap();
        assert!((m + 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_gradient_for_linear_family() {
        let spec = DriftSpec::new(DriftFamily::Linear, 1).unwrap();
        let (m, g) = girsanov_weight_gradient(&spec.bind(&[0.0]), &tri(), 0.0, &Context::EMPTY).unwrap();
        assert_eq!(m, 0.0);
        // M = -theta - theta^2 / 4 on this path.
        assert!((g[0] + 1.0).abs() < 1e-15);
        let (m, _) = girsanov_weight_gradient(&spec.bind(&[-1.0]), &tri(), 0.0, &Context::EMPTY).unwrap();
        assert!((m - 0.75).abs() < 1e-15);
    }

    #[test]
    fn non_finite_drift_is_reported() {
        let f = ScalarDrift::new(|x, _| if x > 0.5 { f64::INFINITY } else { 0.0 });
        assert!(matches!(
            log_girsanov_weight(&f, &tri(), 0.0, &Context::EMPTY),
            Err(Error::NonFiniteDrift { .. })
        ));
    }
}

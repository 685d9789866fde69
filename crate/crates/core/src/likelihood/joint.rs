//! Joint density of several arrival streams driven by one vector diffusion.
//!
//! Coordinate `c` of the latent path is a chain of signed δ-excursions whose
//! zeros sit exactly at coordinate `c`'s arrival times. All coordinates live
//! on one shared grid: the union of every coordinate's own excursion grid,
//! with the other coordinates linearly interpolated onto it.

use super::estimate::{log_mean_exp, LogDensityEstimate};
use super::girsanov::{weight, Times, WeightScratch};
use super::levy::levy_log_density;
use crate::drift::{Context, DriftFn};
use crate::error::{Error, Result};
use crate::excursions::{proposal_height, sample_excursions, PathLaw, SamplerConfig};
use crate::rng::RngSeed;

/// `K` vector-valued excursion chains on a shared, non-uniform grid that
/// starts at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct JointBatch {
    times: Vec<f64>,
    dim: usize,
    k: usize,
    delta: f64,
    /// Path `j` occupies `values[j*len*dim .. (j+1)*len*dim]`, point-major.
    values: Vec<f64>,
    /// Arrival times of each coordinate within the horizon.
    arrivals: Vec<Vec<f64>>,
}

impl JointBatch {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("grid is nonempty")
    }

    pub fn arrivals(&self, coordinate: usize) -> &[f64] {
        &self.arrivals[coordinate]
    }

    pub fn path(&self, j: usize) -> &[f64] {
        let m = self.times.len() * self.dim;
        &self.values[j * m..(j + 1) * m]
    }

    /// Value of coordinate `c` of path `j` at grid point `i`.
    pub fn value(&self, j: usize, i: usize, c: usize) -> f64 {
        self.path(j)[i * self.dim + c]
    }

    /// Single-coordinate view on the same grid.
    pub fn coordinate(&self, c: usize) -> JointBatch {
        let n = self.times.len();
        let mut values = Vec::with_capacity(self.k * n);
        for j in 0..self.k {
            values.extend((0..n).map(|i| self.value(j, i, c)));
        }
        JointBatch {
            times: self.times.clone(),
            dim: 1,
            k: self.k,
            delta: self.delta,
            values,
            arrivals: vec![self.arrivals[c].clone()],
        }
    }
}

fn cumulative(chain: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    std::iter::once(0.0)
        .chain(chain.iter().map(|t| {
            acc += t;
            acc
        }))
        .collect()
}

/// Samples `k` joint excursion chains. `chains[c]` lists coordinate `c`'s
/// interarrival durations from time 0; excursion `j` of coordinate `c` is
/// drawn on stream `seed.derive(c).derive(j)`. The shared grid stops at the
/// last arrival of any coordinate, or at `horizon` if that is earlier; a
/// coordinate whose chain ends first stays at 0 afterwards. Gaps too short
/// for δ-excursions are conditioned on a lower height.
pub fn build_joint_excursion(
    chains: &[Vec<f64>],
    k: usize,
    n_steps: usize,
    delta: f64,
    seed: RngSeed,
    horizon: Option<f64>,
) -> Result<JointBatch> {
    if chains.is_empty() {
        return Err(Error::invalid("need at least one coordinate"));
    }
    if chains.iter().all(|c| c.is_empty()) {
        return Err(Error::invalid("no interarrivals to build excursions from"));
    }
    let ends: Vec<Vec<f64>> = chains.iter().map(|c| cumulative(c)).collect();
    let last = ends.iter().map(|e| *e.last().unwrap()).fold(0.0, f64::max);
    let h = horizon.map_or(last, |t| t.min(last));
    if !(h > 0.0) {
        return Err(Error::invalid("joint horizon must be positive"));
    }
    let dim = chains.len();
    // Own grids and sampled values per coordinate.
    let mut own_times: Vec<Vec<f64>> = Vec::with_capacity(dim);
    let mut own_values: Vec<Vec<Vec<f64>>> = Vec::with_capacity(dim);
    for (c, chain) in chains.iter().enumerate() {
        let cum = &ends[c];
        let mut t = Vec::with_capacity(chain.len() * n_steps + 1);
        let mut vals = vec![Vec::with_capacity(chain.len() * n_steps + 1); k];
        let cseed = seed.derive(c as u64);
        for (j, &tau) in chain.iter().enumerate() {
            let height = proposal_height(PathLaw::Excursion, tau, delta);
            let batch = sample_excursions(tau, height, &SamplerConfig::new(k, n_steps), cseed.derive(j as u64))?;
            let dt = tau / n_steps as f64;
            t.extend((0..n_steps).map(|i| if i == 0 { cum[j] } else { cum[j] + i as f64 * dt }));
            for (v, p) in vals.iter_mut().zip(batch.paths()) {
                v.extend_from_slice(&p[..n_steps]);
            }
        }
        t.push(*cum.last().unwrap());
        for v in vals.iter_mut() {
            v.push(0.0);
        }
        own_times.push(t);
        own_values.push(vals);
    }
    let mut times: Vec<f64> = own_times.iter().flatten().copied().filter(|&t| t <= h).collect();
    times.push(h);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let n = times.len();
    let mut values = vec![0.0; k * n * dim];
    for c in 0..dim {
        let ot = &own_times[c];
        for (j, ov) in own_values[c].iter().enumerate() {
            let base = j * n * dim;
            let mut p = 0;
            for (i, &t) in times.iter().enumerate() {
                if t > *ot.last().unwrap() {
                    break;
                }
                while p + 1 < ot.len() && ot[p + 1] <= t {
                    p += 1;
                }
                let v = if ot[p] == t || p + 1 == ot.len() {
                    ov[p]
                } else {
                    let w = (t - ot[p]) / (ot[p + 1] - ot[p]);
                    ov[p] + w * (ov[p + 1] - ov[p])
                };
                values[base + i * dim + c] = v;
            }
        }
    }
    let arrivals = ends
        .iter()
        .map(|e| e[1..].iter().copied().filter(|&t| t <= h).collect())
        .collect();
    Ok(JointBatch {
        times,
        dim,
        k,
        delta,
        values,
        arrivals,
    })
}

/// `sum_{c,i} log p(tau_i^c; delta) + log mean_j exp(M_j)`, the Girsanov
/// exponent running over the whole shared grid.
pub fn joint_log_density(
    chains: &[Vec<f64>],
    delta: f64,
    drift: &dyn DriftFn,
    batch: &JointBatch,
    ctx: &Context<'_>,
) -> Result<LogDensityEstimate> {
    if chains.len() != batch.dim() || drift.dim() != batch.dim() {
        return Err(Error::invalid(format!(
            "{} chains, batch of dimension {}, drift of dimension {}",
            chains.len(),
            batch.dim(),
            drift.dim()
        )));
    }
    if batch.is_empty() {
        return Err(Error::invalid("empty joint batch"));
    }
    let mut base = 0.0;
    for (c, chain) in chains.iter().enumerate() {
        let cum = cumulative(chain);
        let inside: Vec<f64> = cum[1..].iter().copied().filter(|&t| t <= batch.horizon()).collect();
        if inside != batch.arrivals[c] {
            return Err(Error::invalid(format!(
                "coordinate {c}: batch zeros do not match the data's arrival times"
            )));
        }
        for &tau in &chain[..inside.len()] {
            base += levy_log_density(tau, delta)?;
        }
    }
    let times = Times::Explicit(&batch.times);
    let mut scratch = WeightScratch::default();
    let w: Vec<f64> = (0..batch.k)
        .map(|j| weight(drift, batch.path(j), batch.dim, times, ctx, &mut scratch))
        .collect::<Result<_>>()?;
    let (lme, se) = log_mean_exp(&w);
    Ok(LogDensityEstimate {
        value: base + lme,
        std_error: se,
        k: batch.k,
    })
}

//! Euler–Maruyama simulation and arrival extraction.
//!
//! Arrivals are zero crossings of the simulated path that close an
//! excursion of height at least `delta`. Crossing times are linearly
//! interpolated between grid points; the path is never reset at a crossing.
//!
//! Noise for coordinate `k` always comes from the stream `seed.derive(k)`, so
//! a coordinate's driving noise does not depend on how many other
//! coordinates are simulated alongside it.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::arrivals::{Mark, MarkedArrivals};
use crate::drift::{Context, DriftFn, DriftWorkspace};
use crate::error::{Error, Result};
use crate::grid::{Path, TimeGrid};
use crate::rng::{RngSeed, StreamRng};

/// Expected overshoot of a continuously monitored Brownian maximum over its
/// value on a grid of unit spacing, `-zeta(1/2)/sqrt(2*pi)`.
pub const DISCRETE_MAX_SHIFT: f64 = 0.582_597_157_939_010_7;

/// How arrivals are labelled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MarkRule {
    /// 0 for an excursion above the reference, 1 below (scalar runs only).
    #[default]
    Sign,
    /// Index of the coordinate that crossed.
    Coordinate,
}

/// Settings shared by the arrival samplers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub sigma: f64,
    pub delta: f64,
    /// Lowers the height threshold to `delta - c * 0.5826 * sigma * sqrt(dt)`
    /// to offset the excursion height lost to discrete monitoring. `0`
    /// applies `delta` literally.
    pub monitoring_correction: f64,
    /// Stop as soon as this many arrivals have been produced.
    pub max_arrivals: Option<usize>,
    pub marks: MarkRule,
}

impl SimConfig {
    pub fn new(delta: f64) -> Self {
        Self {
            sigma: 1.0,
            delta,
            monitoring_correction: 2.0,
            max_arrivals: None,
            marks: MarkRule::Sign,
        }
    }

    pub fn literal(mut self) -> Self {
        self.monitoring_correction = 0.0;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_max_arrivals(mut self, n: usize) -> Self {
        self.max_arrivals = Some(n);
        self
    }

    /// Height an on-grid excursion must reach to count as an arrival.
    pub fn threshold(&self, dt: f64) -> f64 {
        (self.delta - self.monitoring_correction * DISCRETE_MAX_SHIFT * self.sigma * dt.sqrt()).max(0.0)
    }

    fn validate(&self) -> Result<()> {
        check_sigma(self.sigma)?;
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid(format!("delta must be nonnegative, got {}", self.delta)));
        }
        if !(self.monitoring_correction >= 0.0 && self.monitoring_correction.is_finite()) {
            return Err(Error::invalid("monitoring correction must be nonnegative"));
        }
        Ok(())
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be nonnegative, got {sigma}")));
    }
    Ok(())
}

/// Streaming zero-crossing detector with height filtering.
#[derive(Clone, Debug)]
struct CrossingTracker {
    threshold: f64,
    dt: f64,
    last_crossing: Option<f64>,
    seg_max: f64,
    seg_mark: Mark,
    prev_t: f64,
    prev_g: f64,
}

impl CrossingTracker {
    fn new(threshold: f64, dt: f64, t0: f64, g0: f64) -> Self {
        Self {
            threshold,
            dt,
            last_crossing: (g0 == 0.0).then_some(t0),
            seg_max: 0.0,
            seg_mark: 0,
            prev_t: t0,
            prev_g: g0,
        }
    }

    fn note_interior(&mut self, g: f64) {
        if g.abs() > self.seg_max {
            self.seg_max = g.abs();
            self.seg_mark = if g > 0.0 { 0 } else { 1 };
        }
    }

    fn close_segment(&mut self, c: f64) -> Option<(f64, Mark)> {
        let kept = self.last_crossing.is_some() && self.seg_max >= self.threshold;
        let out = kept.then_some((c, self.seg_mark));
        self.last_crossing = Some(c);
        self.seg_max = 0.0;
        self.seg_mark = 0;
        out
    }

    /// Feeds the next grid point; returns an arrival if one was completed.
    fn push(&mut self, t: f64, g: f64) -> Option<(f64, Mark)> {
        let (t0, g0) = (self.prev_t, self.prev_g);
        self.prev_t = t;
        self.prev_g = g;
        if g == 0.0 && g0 != 0.0 {
            self.close_segment(t)
        } else if g0 * g < 0.0 {
            let c = t0 + self.dt * g0.abs() / (g0.abs() + g.abs());
            let out = self.close_segment(c);
            self.note_interior(g);
            out
        } else {
            self.note_interior(g);
            None
        }
    }
}

/// Reference level a path is compared against; `None` means zero.
pub type Reference<'a> = Option<&'a dyn Fn(f64) -> f64>;

fn level(reference: Reference<'_>, t: f64) -> f64 {
    reference.map_or(0.0, |f| f(t))
}

fn diverged(t: f64, x: &[f64]) -> Error {
    Error::Diverged {
        time: t,
        state: x.to_vec(),
    }
}

/// One Euler–Maruyama run, optionally tracking arrivals online.
struct Stepper<'a> {
    drift: &'a dyn DriftFn,
    grid: TimeGrid,
    sigma: f64,
    rngs: Vec<StreamRng>,
    ws: DriftWorkspace,
    mu: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(drift: &'a dyn DriftFn, grid: TimeGrid, sigma: f64, seed: RngSeed) -> Self {
        let noise: Vec<RngSeed> = (0..drift.dim() as u64).map(|k| seed.derive(k)).collect();
        Self::with_streams(drift, grid, sigma, &noise)
    }

    fn with_streams(drift: &'a dyn DriftFn, grid: TimeGrid, sigma: f64, noise: &[RngSeed]) -> Self {
        let d = drift.dim();
        Self {
            drift,
            grid,
            sigma,
            rngs: noise.iter().map(|s| s.rng()).collect(),
            ws: DriftWorkspace::default(),
            mu: vec![0.0; d],
        }
    }

    /// Advances `x` from grid point `i` to `i + 1`.
    fn step(&mut self, i: usize, x: &mut [f64], ctx: &Context<'_>) -> Result<()> {
        let t = self.grid.time(i);
        let dt = self.grid.dt();
        self.drift.eval(x, t, ctx, &mut self.ws, &mut self.mu);
        if self.mu.iter().any(|m| !m.is_finite()) {
            return Err(diverged(t, x));
        }
        let sd = self.sigma * dt.sqrt();
        for ((xk, mk), rng) in x.iter_mut().zip(&self.mu).zip(&mut self.rngs) {
            let z: f64 = rng.sample(StandardNormal);
            *xk += mk * dt + sd * z;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(diverged(self.grid.time(i + 1), x));
        }
        Ok(())
    }
}

/// Events strictly before `t`.
fn before(events: &[f64], t: f64) -> &[f64] {
    &events[..events.partition_point(|&e| e < t)]
}

/// Simulates `dX = mu dt + sigma dW` on `grid`. At step `i` the drift sees
/// the given history and exogenous events strictly before `t_i`.
pub fn euler_maruyama(
    drift: &dyn DriftFn,
    x0: &[f64],
    grid: TimeGrid,
    sigma: f64,
    seed: RngSeed,
    context: &Context<'_>,
) -> Result<Path> {
    check_sigma(sigma)?;
    check_state(drift, x0)?;
    let d = x0.len();
    let mut stepper = Stepper::new(drift, grid, sigma, seed);
    let mut values = Vec::with_capacity(grid.n_points() * d);
    let mut x = x0.to_vec();
    values.extend_from_slice(&x);
    for i in 0..grid.n_steps() {
        let t = grid.time(i);
        let ctx = Context {
            history: before(context.history, t),
            exogenous: before(context.exogenous, t),
        };
        stepper.step(i, &mut x, &ctx)?;
        values.extend_from_slice(&x);
    }
    Path::new(grid, d, values)
}

fn check_state(drift: &dyn DriftFn, x0: &[f64]) -> Result<()> {
    if x0.len() != drift.dim() {
        return Err(Error::invalid(format!(
            "initial state has dimension {}, drift expects {}",
            x0.len(),
            drift.dim()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial state must be finite"));
    }
    Ok(())
}

/// Times where `component` of `path` crosses the reference: every sign change
/// of `g_i = x_i - f(t_i)`, linearly interpolated, plus grid points where
/// `g_i` is exactly zero (a run of zeros is reported once).
///
/// ```
/// use excursion_pp::grid::{Path, TimeGrid};
/// use excursion_pp::sim::detect_crossings;
///
/// let grid = TimeGrid::new(0.0, 1.0, 3).unwrap();
/// let path = Path::scalar(grid, vec![1.0, 0.5, -0.2, 0.1]).unwrap();
/// let c = detect_crossings(&path, None, 0).unwrap();
/// assert!((c[0] - (1.0 + 0.5 / 0.7)).abs() < 1e-12);
/// assert!((c[1] - (2.0 + 0.2 / 0.3)).abs() < 1e-12);
/// ```
pub fn detect_crossings(path: &Path, reference: Reference<'_>, component: usize) -> Result<Vec<f64>> {
    if component >= path.dim() {
        return Err(Error::invalid(format!(
            "component {component} out of range for a {}-dimensional path",
            path.dim()
        )));
    }
    let grid = path.grid();
    let g = |i: usize| path.state(i)[component] - level(reference, grid.time(i));
    let mut out = Vec::new();
    let mut prev = g(0);
    if prev == 0.0 {
        out.push(grid.time(0));
    }
    for i in 1..grid.n_points() {
        let cur = g(i);
        if cur == 0.0 && prev != 0.0 {
            out.push(grid.time(i));
        } else if prev * cur < 0.0 {
            out.push(grid.time(i - 1) + grid.dt() * prev.abs() / (prev.abs() + cur.abs()));
        }
        prev = cur;
    }
    Ok(out)
}

/// Keeps crossing `c_{j+1}` when the path between `c_j` and `c_{j+1}` strays
/// at least `delta` from the reference. The mark is 0 for an excursion above
/// the reference and 1 below. Origin of the result is the grid start.
pub fn filter_min_height(
    crossings: &[f64],
    path: &Path,
    delta: f64,
    reference: Reference<'_>,
    component: usize,
) -> Result<MarkedArrivals> {
    if component >= path.dim() {
        return Err(Error::invalid(format!("component {component} out of range")));
    }
    if crossings.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("crossings must be sorted"));
    }
    let grid = path.grid();
    let g = |i: usize| path.state(i)[component] - level(reference, grid.time(i));
    let mut times = Vec::new();
    let mut marks = Vec::new();
    let mut i = 0;
    for w in crossings.windows(2) {
        let (a, b) = (w[0], w[1]);
        while i < grid.n_points() && grid.time(i) <= a {
            i += 1;
        }
        let (mut peak, mut mark) = (0.0f64, 0);
        let mut j = i;
        while j < grid.n_points() && grid.time(j) < b {
            let v = g(j);
            if v.abs() > peak {
                peak = v.abs();
                mark = if v > 0.0 { 0 } else { 1 };
            }
            j += 1;
        }
        if peak >= delta {
            times.push(b);
            marks.push(mark);
        }
    }
    MarkedArrivals::new(times, marks, grid.t0())
}

/// Result of a simulation run with arrival tracking.
#[derive(Clone, Debug)]
pub struct Simulation {
    /// Present when requested; truncated at the stopping step if the run
    /// ended early.
    pub path: Option<Path>,
    pub arrivals: MarkedArrivals,
}

/// Simulates a scalar diffusion from `x0` and returns
/// its δ-excursion arrivals, marked by excursion sign. The drift sees its
/// own arrivals as history as they happen.
pub fn sample_arrivals(
    drift: &dyn DriftFn,
    x0: f64,
    grid: TimeGrid,
    cfg: &SimConfig,
    seed: RngSeed,
    exogenous: &[f64],
) -> Result<MarkedArrivals> {
    if drift.dim() != 1 {
        return Err(Error::invalid("use sample_arrivals_multidim for vector drifts"));
    }
    let cfg = SimConfig {
        marks: MarkRule::Sign,
        ..*cfg
    };
    Ok(simulate(drift, &[x0], grid, &cfg, seed, exogenous, false)?.arrivals)
}

/// Like [`sample_arrivals`] for `d >= 1` coordinates: each coordinate's
/// zero crossings are filtered independently and marked with the coordinate
/// index.
pub fn sample_arrivals_multidim(
    drift: &dyn DriftFn,
    x0: &[f64],
    grid: TimeGrid,
    cfg: &SimConfig,
    seed: RngSeed,
) -> Result<MarkedArrivals> {
    let cfg = SimConfig {
        marks: MarkRule::Coordinate,
        ..*cfg
    };
    Ok(simulate(drift, x0, grid, &cfg, seed, &[], false)?.arrivals)
}

/// Shared engine behind the samplers.
pub fn simulate(
    drift: &dyn DriftFn,
    x0: &[f64],
    grid: TimeGrid,
    cfg: &SimConfig,
    seed: RngSeed,
    exogenous: &[f64],
    keep_path: bool,
) -> Result<Simulation> {
    let noise: Vec<RngSeed> = (0..x0.len() as u64).map(|k| seed.derive(k)).collect();
    simulate_streams(drift, x0, grid, cfg, &noise, exogenous, keep_path)
}

/// [`simulate`] with an explicit noise stream per coordinate.
pub fn simulate_streams(
    drift: &dyn DriftFn,
    x0: &[f64],
    grid: TimeGrid,
    cfg: &SimConfig,
    noise: &[RngSeed],
    exogenous: &[f64],
    keep_path: bool,
) -> Result<Simulation> {
    cfg.validate()?;
    check_state(drift, x0)?;
    if noise.len() != x0.len() {
        return Err(Error::invalid("need one noise stream per coordinate"));
    }
    let d = x0.len();
    if d > 1 && cfg.marks == MarkRule::Sign {
        return Err(Error::invalid("sign marks need a scalar diffusion"));
    }
    let threshold = cfg.threshold(grid.dt());
    let mut stepper = Stepper::with_streams(drift, grid, cfg.sigma, noise);
    let mut trackers: Vec<CrossingTracker> = x0
        .iter()
        .map(|&v| CrossingTracker::new(threshold, grid.dt(), grid.t0(), v))
        .collect();
    let mut x = x0.to_vec();
    let mut values = Vec::new();
    if keep_path {
        values.extend_from_slice(&x);
    }
    let mut times: Vec<f64> = Vec::new();
    let mut marks: Vec<Mark> = Vec::new();
    let mut pending: Vec<(f64, Mark)> = Vec::with_capacity(d);
    let mut steps_done = 0;
    for i in 0..grid.n_steps() {
        let t = grid.time(i);
        let ctx = Context {
            history: before(&times, t),
            exogenous: before(exogenous, t),
        };
        stepper.step(i, &mut x, &ctx)?;
        steps_done = i + 1;
        if keep_path {
            values.extend_from_slice(&x);
        }
        let t1 = grid.time(i + 1);
        pending.clear();
        for (k, (tr, &v)) in trackers.iter_mut().zip(&x).enumerate() {
            if let Some((c, sign_mark)) = tr.push(t1, v) {
                pending.push((
                    c,
                    match cfg.marks {
                        MarkRule::Sign => sign_mark,
                        MarkRule::Coordinate => k as Mark,
                    },
                ));
            }
        }
        pending.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(c, m) in &pending {
            // Two coordinates crossing at the same instant cannot both be
            // stored as strictly increasing arrivals.
            if times.last().is_some_and(|&l| c <= l) {
                continue;
            }
            times.push(c);
            marks.push(m);
        }
        if cfg.max_arrivals.is_some_and(|n| times.len() >= n) {
            break;
        }
    }
    let arrivals = MarkedArrivals::new(times, marks, grid.t0())?;
    let path = if keep_path {
        let g = TimeGrid::new(grid.t0(), grid.dt(), steps_done.max(1))?;
        if steps_done == 0 {
            values.extend_from_slice(&x);
        }
        Some(Path::new(g, d, values)?)
    } else {
        None
    };
    Ok(Simulation { path, arrivals })
}

/// Runs `n_runs` independent simulations, run `r` on stream
/// `seed.derive(r)`, in parallel.
pub fn sample_arrival_runs(
    drift: &dyn DriftFn,
    x0: &[f64],
    grid: TimeGrid,
    cfg: &SimConfig,
    seed: RngSeed,
    n_runs: usize,
) -> Result<Vec<MarkedArrivals>> {
    (0..n_runs as u64)
        .into_par_iter()
        .map(|r| Ok(simulate(drift, x0, grid, cfg, seed.derive(r), &[], false)?.arrivals))
        .collect()
}

/// First time the scalar diffusion started at `x0` reaches `alpha`,
/// linearly interpolated between grid points.
pub fn first_hitting_time(
    drift: &dyn DriftFn,
    x0: f64,
    alpha: f64,
    dt: f64,
    sigma: f64,
    seed: RngSeed,
    t_max: f64,
) -> Result<f64> {
    if drift.dim() != 1 {
        return Err(Error::invalid("first hitting times need a scalar drift"));
    }
    if !(x0.is_finite() && alpha.is_finite()) || x0 == alpha {
        return Err(Error::invalid(format!("start {x0} must differ from boundary {alpha}")));
    }
    if !(t_max > 0.0) {
        return Err(Error::invalid("t_max must be positive"));
    }
    check_sigma(sigma)?;
    let grid = TimeGrid::spanning(0.0, t_max, dt)?;
    let mut stepper = Stepper::new(drift, grid, sigma, seed);
    let mut x = [x0];
    let mut g0 = x0 - alpha;
    let ctx = Context::EMPTY;
    for i in 0..grid.n_steps() {
        stepper.step(i, &mut x, &ctx)?;
        let g = x[0] - alpha;
        if g == 0.0 || g0 * g < 0.0 {
            return Ok(grid.time(i) + dt * g0.abs() / (g0.abs() + g.abs()));
        }
        g0 = g;
    }
    Err(Error::Censored { t_max })
}

/// `n` independent first hitting times, sample `i` on `seed.derive(i)`.
#[allow(clippy::too_many_arguments)]
pub fn sample_first_hitting_times(
    drift: &dyn DriftFn,
    x0: f64,
    alpha: f64,
    dt: f64,
    sigma: f64,
    seed: RngSeed,
    t_max: f64,
    n: usize,
) -> Result<Vec<f64>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| first_hitting_time(drift, x0, alpha, dt, sigma, seed.derive(i), t_max))
        .collect()
}

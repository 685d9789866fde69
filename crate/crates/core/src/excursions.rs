//! Brownian bridges and Brownian excursions.
//!
//! A discrete unit bridge is built as `B_i - (i/n) B_n` from a Gaussian random
//! walk, and the Vervaat transform turns it into a unit excursion by cutting
//! it at its minimum and swapping the two pieces. Excursions of length `tau`
//! follow from Brownian scaling, `e_tau(t) = sqrt(tau) e_1(t / tau)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arrivals::Mark;
use crate::error::{Error, Result};
use crate::grid::{Path, TimeGrid};
use crate::rng::{RngSeed, StreamRng};

/// How excursion signs are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignPolicy {
    /// Independent fair coin per path.
    #[default]
    Random,
    Positive,
    Negative,
}

impl SignPolicy {
    /// Mark 0 is an excursion above the reference level, mark 1 below.
    pub fn for_mark(mark: Mark) -> Self {
        if mark == 0 {
            SignPolicy::Positive
        } else {
            SignPolicy::Negative
        }
    }
}

/// `K` discretized excursions (or bridges) of a common length.
#[derive(Clone, Debug, PartialEq)]
pub struct ExcursionBatch {
    tau: f64,
    n_steps: usize,
    delta: f64,
    /// Path `k` occupies `values[k*(n_steps+1) .. (k+1)*(n_steps+1)]`.
    values: Vec<f64>,
    signs: Vec<i8>,
    attempts: usize,
}

impl ExcursionBatch {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.tau / self.n_steps as f64
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    #[inline]
    pub fn path(&self, k: usize) -> &[f64] {
        let m = self.n_steps + 1;
        &self.values[k * m..(k + 1) * m]
    }

    pub fn paths(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.n_steps + 1)
    }

    pub fn sign(&self, k: usize) -> i8 {
        self.signs[k]
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    /// Number of unit excursions drawn to fill the batch, rejected ones
    /// included.
    pub fn attempts(&self) -> usize {
        self.attempts
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.len() as f64 / self.attempts.max(1) as f64
    }

    /// Path `k` as a [`Path`] on `[0, tau]`.
    pub fn to_path(&self, k: usize) -> Path {
        let grid = TimeGrid::new(0.0, self.dt(), self.n_steps).expect("batch grid is valid");
        Path::scalar(grid, self.path(k).to_vec()).expect("batch values are finite")
    }
}

fn check_steps(n_steps: usize) -> Result<()> {
    if n_steps < 2 {
        return Err(Error::invalid(format!("need at least 2 steps, got {n_steps}")));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("excursion length must be positive, got {tau}")));
    }
    Ok(())
}

/// Fills `out` (length `n + 1`) with a unit-interval bridge.
fn fill_unit_bridge(rng: &mut StreamRng, out: &mut [f64]) {
    let n = out.len() - 1;
    let sd = (1.0 / n as f64).sqrt();
    out[0] = 0.0;
    let mut acc = 0.0;
    for v in &mut out[1..] {
        let z: f64 = rng.sample(StandardNormal);
        acc += sd * z;
        *v = acc;
    }
    let end = out[n];
    for (i, v) in out.iter_mut().enumerate() {
        *v -= (i as f64 / n as f64) * end;
    }
    out[n] = 0.0;
}

/// Writes the Vervaat transform of `bridge` into `out`.
fn vervaat_into(bridge: &[f64], out: &mut [f64]) {
    let n = bridge.len() - 1;
    let mut imin = 0;
    for i in 1..n {
        if bridge[i] < bridge[imin] {
            imin = i;
        }
    }
    let base = bridge[imin];
    for (i, o) in out[..n].iter_mut().enumerate() {
        *o = bridge[(imin + i) % n] - base;
    }
    out[0] = 0.0;
    out[n] = 0.0;
}

/// A Brownian bridge from 0 to 0 on `[0, 1]` with `n_steps` steps.
pub fn sample_unit_bridge(n_steps: usize, seed: RngSeed) -> Result<Path> {
    check_steps(n_steps)?;
    let mut v = vec![0.0; n_steps + 1];
    fill_unit_bridge(&mut seed.rng(), &mut v);
    Path::scalar(TimeGrid::new(0.0, 1.0 / n_steps as f64, n_steps)?, v)
}

/// Cyclic shift of a bridge at its (first) minimum.
///
/// ```
/// use excursion_pp::excursions::vervaat_excursion;
/// use excursion_pp::grid::{Path, TimeGrid};
///
/// let grid = TimeGrid::new(0.0, 0.25, 4).unwrap();
/// let bridge = Path::scalar(grid, vec![0.0, 0.3, -0.4, 0.2, 0.0]).unwrap();
/// let e = vervaat_excursion(&bridge).unwrap();
/// let want = [0.0, 0.6, 0.4, 0.7, 0.0];
/// for (a, b) in e.values().iter().zip(want) {
///     assert!((a - b).abs() < 1e-12);
/// }
/// ```
pub fn vervaat_excursion(bridge: &Path) -> Result<Path> {
    if bridge.dim() != 1 {
        return Err(Error::invalid("vervaat transform needs a scalar path"));
    }
    let v = bridge.values();
    let n = v.len() - 1;
    if n == 0 || v[0] != 0.0 || v[n] != 0.0 {
        return Err(Error::invalid("bridge must start and end at 0"));
    }
    let mut out = vec![0.0; v.len()];
    vervaat_into(v, &mut out);
    Path::scalar(*bridge.grid(), out)
}

/// Brownian scaling of a unit-interval path to length `tau`.
pub fn scale_to_length(unit: &Path, tau: f64) -> Result<Path> {
    check_tau(tau)?;
    let g = unit.grid();
    let grid = TimeGrid::new(g.t0() * tau, g.dt() * tau, g.n_steps())?;
    let s = tau.sqrt();
    Path::new(grid, unit.dim(), unit.values().iter().map(|v| v * s).collect())
}

/// Draws unit excursions until one reaches `threshold`; returns false if
/// `budget` attempts run out first.
fn accept_unit_excursion(
    rng: &mut StreamRng,
    threshold: f64,
    scratch: &mut [f64],
    out: &mut [f64],
    attempts: &mut usize,
    budget: usize,
) -> bool {
    loop {
        if *attempts >= budget {
            return false;
        }
        *attempts += 1;
        fill_unit_bridge(rng, scratch);
        vervaat_into(scratch, out);
        if threshold <= 0.0 || out.iter().any(|&v| v >= threshold) {
            return true;
        }
    }
}

/// Path law the Girsanov expectation is taken under.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathLaw {
    /// Brownian excursions whose height reaches δ.
    #[default]
    Excursion,
    /// First passage to δ followed by first passage back to 0.
    Passage,
}

/// Knobs for [`sample_excursions`] and [`sample_passages`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub k: usize,
    pub n_steps: usize,
    /// Cap on rejected draws; `None` means `1000 * k`.
    pub max_rejects: Option<usize>,
    pub signs: SignPolicy,
    /// Used by [`sample_paths`].
    pub law: PathLaw,
}

impl SamplerConfig {
    pub fn new(k: usize, n_steps: usize) -> Self {
        Self {
            k,
            n_steps,
            max_rejects: None,
            signs: SignPolicy::Random,
            law: PathLaw::Excursion,
        }
    }

    pub fn with_law(mut self, law: PathLaw) -> Self {
        self.law = law;
        self
    }

    pub fn with_signs(mut self, signs: SignPolicy) -> Self {
        self.signs = signs;
        self
    }
}

/// Largest `height / sqrt(tau)` a batch is conditioned on. At this ratio
/// about 18% of unit excursions are tall enough, fewer on a coarse grid.
const FEASIBLE_HEIGHT: f64 = 1.5;

/// Height the paths for a length `tau` are conditioned on. Lengths too
/// short for δ-excursions to be drawn at a usable rate get the tallest
/// feasible height instead; the Lévy factor still uses δ. Passages need no
/// rejection and always use δ.
pub(crate) fn proposal_height(law: PathLaw, tau: f64, delta: f64) -> f64 {
    match law {
        PathLaw::Excursion => delta.min(FEASIBLE_HEIGHT * tau.sqrt()),
        PathLaw::Passage => delta,
    }
}

/// `K` signed excursions of length `tau` whose height reaches `delta`.
///
/// Heights are checked on the unsigned path; signs are applied afterwards.
/// Fails with [`Error::AcceptanceFailure`] when more than `max_rejects`
/// draws are rejected.
pub fn sample_excursions(tau: f64, delta: f64, cfg: &SamplerConfig, seed: RngSeed) -> Result<ExcursionBatch> {
    check_tau(tau)?;
    check_steps(cfg.n_steps)?;
    if cfg.k == 0 {
        return Err(Error::invalid("need at least one excursion"));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("delta must be nonnegative, got {delta}")));
    }
    let max_rejects = cfg.max_rejects.unwrap_or(1000 * cfg.k);
    let budget = cfg.k + max_rejects;
    let m = cfg.n_steps + 1;
    let threshold = delta / tau.sqrt();
    let mut rng = seed.rng();
    let mut values = vec![0.0; cfg.k * m];
    let mut scratch = vec![0.0; m];
    let mut attempts = 0;
    for (k, out) in values.chunks_exact_mut(m).enumerate() {
        if !accept_unit_excursion(&mut rng, threshold, &mut scratch, out, &mut attempts, budget) {
            return Err(Error::AcceptanceFailure {
                tau,
                delta,
                accepted: k,
                attempts,
                rate: k as f64 / attempts.max(1) as f64,
            });
        }
    }
    let signs = draw_signs(cfg, seed);
    let scale = tau.sqrt();
    for (path, &s) in values.chunks_exact_mut(m).zip(&signs) {
        let f = scale * f64::from(s);
        for v in path.iter_mut() {
            *v *= f;
        }
    }
    Ok(ExcursionBatch {
        tau,
        n_steps: cfg.n_steps,
        delta,
        values,
        signs,
        attempts,
    })
}

fn draw_signs(cfg: &SamplerConfig, seed: RngSeed) -> Vec<i8> {
    let mut sign_rng = seed.derive(crate::rng::tags::SIGNS).rng();
    (0..cfg.k)
        .map(|_| match cfg.signs {
            SignPolicy::Positive => 1,
            SignPolicy::Negative => -1,
            SignPolicy::Random => {
                if sign_rng.random::<bool>() {
                    1
                } else {
                    -1
                }
            }
        })
        .collect()
}

const SPLIT_POINTS: usize = 1024;

/// Inverse-CDF table for the fraction `u = s / tau` of a passage spent
/// reaching δ, on a logit grid. With `c = δ²/(2 tau)` the density of `u` is
/// proportional to `(u (1-u))^{-3/2} exp(-c/u - c/(1-u))`.
struct SplitTable {
    w: Vec<f64>,
    cdf: Vec<f64>,
}

impl SplitTable {
    fn new(c: f64) -> Self {
        // Below u = c/40 the density is negligible; for large c it is a
        // narrow peak at 1/2 of width about 0.7/sqrt(c) in w.
        let tail = (40.0 / c).ln();
        let half = if c < 1.0 { tail } else { tail.max(6.0 / c.sqrt()) };
        let step = 2.0 * half / (SPLIT_POINTS - 1) as f64;
        let w: Vec<f64> = (0..SPLIT_POINTS).map(|j| -half + j as f64 * step).collect();
        // Density in w, which carries the Jacobian u (1-u).
        let log_f: Vec<f64> = w
            .iter()
            .map(|&w| {
                let u = logistic(w);
                let v = logistic(-w);
                -0.5 * (u.ln() + v.ln()) - c / u - c / v
            })
            .collect();
        let top = log_f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut cdf = Vec::with_capacity(SPLIT_POINTS);
        cdf.push(0.0);
        for j in 1..SPLIT_POINTS {
            let a = (log_f[j - 1] - top).exp();
            let b = (log_f[j] - top).exp();
            cdf.push(cdf[j - 1] + 0.5 * (a + b) * step);
        }
        let total = cdf[SPLIT_POINTS - 1];
        for v in &mut cdf {
            *v /= total;
        }
        Self { w, cdf }
    }

    fn draw(&self, rng: &mut StreamRng) -> f64 {
        let p: f64 = rng.random();
        let j = self.cdf.partition_point(|&c| c < p).clamp(1, SPLIT_POINTS - 1);
        let span = self.cdf[j] - self.cdf[j - 1];
        let frac = if span > 0.0 { (p - self.cdf[j - 1]) / span } else { 0.5 };
        logistic(self.w[j - 1] + frac * (self.w[j] - self.w[j - 1]))
    }
}

fn logistic(w: f64) -> f64 {
    1.0 / (1.0 + (-w).exp())
}

/// Bessel(3) bridge from `a` down to 0 over `[0, len]`, evaluated at the
/// increasing offsets `at`: the norm of a 3-d Brownian bridge.
fn bessel3_bridge(rng: &mut StreamRng, a: f64, len: f64, at: &[f64], walk: &mut Vec<[f64; 3]>, out: &mut [f64]) {
    let mut b = [0.0f64; 3];
    let mut prev = 0.0;
    walk.clear();
    for &r in at.iter().chain([len].iter()) {
        let sd = (r - prev).max(0.0).sqrt();
        for c in &mut b {
            *c += sd * rng.sample::<f64, _>(StandardNormal);
        }
        walk.push(b);
        prev = r;
    }
    let end = b;
    for ((o, &r), w) in out.iter_mut().zip(at).zip(walk.iter()) {
        let f = r / len;
        let x = a * (1.0 - f) + w[0] - f * end[0];
        let y = w[1] - f * end[1];
        let z = w[2] - f * end[2];
        *o = (x * x + y * y + z * z).sqrt();
    }
}

/// `K` signed passages of length `tau` through height `delta`.
///
/// The time `s` at which δ is reached is drawn from its conditional law
/// given `tau`; the rise is δ minus a Bessel(3) bridge from δ to 0 over
/// `[0, s]` and the descent a Bessel(3) bridge from δ to 0 over
/// `[s, tau]`. Nothing is rejected.
pub fn sample_passages(tau: f64, delta: f64, cfg: &SamplerConfig, seed: RngSeed) -> Result<ExcursionBatch> {
    check_tau(tau)?;
    check_steps(cfg.n_steps)?;
    if cfg.k == 0 {
        return Err(Error::invalid("need at least one passage"));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("passage height must be positive, got {delta}")));
    }
    let n = cfg.n_steps;
    let m = n + 1;
    let dt = tau / n as f64;
    let table = SplitTable::new(delta * delta / (2.0 * tau));
    let mut rng = seed.rng();
    let mut values = vec![0.0; cfg.k * m];
    let mut at = Vec::with_capacity(n);
    let mut legs = vec![0.0; n];
    let mut walk = Vec::with_capacity(m);
    for path in values.chunks_exact_mut(m) {
        let s = tau * table.draw(&mut rng);
        // First grid index at or after s.
        let split = ((s / dt).ceil() as usize).clamp(1, n);
        at.clear();
        at.extend((1..split).map(|i| i as f64 * dt));
        bessel3_bridge(&mut rng, delta, s, &at, &mut walk, &mut legs[..at.len()]);
        for (i, r) in (1..split).zip(&legs) {
            path[i] = delta - r;
        }
        at.clear();
        at.extend((split..n).map(|i| i as f64 * dt - s));
        bessel3_bridge(&mut rng, delta, tau - s, &at, &mut walk, &mut legs[..at.len()]);
        for (i, r) in (split..n).zip(&legs) {
            path[i] = *r;
        }
        path[0] = 0.0;
        path[n] = 0.0;
    }
    let signs = draw_signs(cfg, seed);
    for (path, &s) in values.chunks_exact_mut(m).zip(&signs) {
        if s < 0 {
            for v in path.iter_mut() {
                *v = -*v;
            }
        }
    }
    Ok(ExcursionBatch {
        tau,
        n_steps: n,
        delta,
        values,
        signs,
        attempts: cfg.k,
    })
}

/// Draws from the law selected by `cfg.law`.
pub fn sample_paths(tau: f64, delta: f64, cfg: &SamplerConfig, seed: RngSeed) -> Result<ExcursionBatch> {
    match cfg.law {
        PathLaw::Excursion => sample_excursions(tau, delta, cfg, seed),
        PathLaw::Passage => sample_passages(tau, delta, cfg, seed),
    }
}

/// [`sample_excursions`] with fair-coin signs.
pub fn sample_signed_excursions(
    tau: f64,
    k: usize,
    delta: f64,
    n_steps: usize,
    seed: RngSeed,
    max_rejects: Option<usize>,
) -> Result<ExcursionBatch> {
    let cfg = SamplerConfig {
        k,
        n_steps,
        max_rejects,
        signs: SignPolicy::Random,
        law: PathLaw::Excursion,
    };
    sample_excursions(tau, delta, &cfg, seed)
}

/// `K` Brownian bridges from 0 to 0 over `[0, tau]`, unfiltered and unsigned.
pub fn sample_pinned_bridges(tau: f64, k: usize, n_steps: usize, seed: RngSeed) -> Result<ExcursionBatch> {
    check_tau(tau)?;
    check_steps(n_steps)?;
    if k == 0 {
        return Err(Error::invalid("need at least one bridge"));
    }
    let m = n_steps + 1;
    let mut rng = seed.rng();
    let mut values = vec![0.0; k * m];
    let scale = tau.sqrt();
    for path in values.chunks_exact_mut(m) {
        fill_unit_bridge(&mut rng, path);
        for v in path.iter_mut() {
            *v *= scale;
        }
    }
    Ok(ExcursionBatch {
        tau,
        n_steps,
        delta: 0.0,
        values,
        signs: vec![1; k],
        attempts: k,
    })
}

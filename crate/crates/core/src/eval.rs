//! Renewal data generators and distribution metrics.

use rand::Rng;
use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma, LogNormal, Weibull};

use crate::arrivals::MarkedArrivals;
use crate::drift::{Context, DriftFn, DriftWorkspace};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::rng::RngSeed;
use crate::sim::{simulate, SimConfig};

/// Interarrival laws of the renewal benchmarks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Renewal {
    Exponential { rate: f64 },
    /// Shape `alpha`, scale `beta`; mean `alpha * beta`.
    Gamma { alpha: f64, beta: f64 },
    /// Scale `lambda`, shape `k`.
    Weibull { lambda: f64, k: f64 },
    LogNormal { mu: f64, sigma: f64 },
}

impl Renewal {
    /// The benchmark parameterizations.
    pub fn standard(name: &str) -> Result<Self> {
        Ok(match name {
            "exponential" => Renewal::Exponential { rate: 1.0 },
            "gamma" => Renewal::Gamma { alpha: 9.0, beta: 1.0 },
            "weibull" => Renewal::Weibull { lambda: 1.0, k: 1.5 },
            "lognormal" => Renewal::LogNormal { mu: 0.0, sigma: 1.0 },
            other => return Err(Error::invalid(format!("unknown renewal family {other:?}"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let ok = match *self {
            Renewal::Exponential { rate } => pos(rate),
            Renewal::Gamma { alpha, beta } => pos(alpha) && pos(beta),
            Renewal::Weibull { lambda, k } => pos(lambda) && pos(k),
            Renewal::LogNormal { mu, sigma } => mu.is_finite() && pos(sigma),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid renewal parameters {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Renewal::Exponential { rate } => 1.0 / rate,
            Renewal::Gamma { alpha, beta } => alpha * beta,
            Renewal::Weibull { lambda, k } => lambda * statrs::function::gamma::gamma(1.0 + 1.0 / k),
            Renewal::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            Renewal::Exponential { rate } => -(-rate * x).exp_m1(),
            Renewal::Gamma { alpha, beta } => Gamma::new(alpha, 1.0 / beta).map_or(f64::NAN, |d| d.cdf(x)),
            Renewal::Weibull { lambda, k } => -(-(x / lambda).powf(k)).exp_m1(),
            Renewal::LogNormal { mu, sigma } => LogNormal::new(mu, sigma).map_or(f64::NAN, |d| d.cdf(x)),
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            Renewal::Exponential { rate } => -(-p).ln_1p() / rate,
            Renewal::Gamma { alpha, beta } => Gamma::new(alpha, 1.0 / beta).map_or(f64::NAN, |d| d.inverse_cdf(p)),
            Renewal::Weibull { lambda, k } => Weibull::new(k, lambda).map_or(f64::NAN, |d| d.inverse_cdf(p)),
            Renewal::LogNormal { mu, sigma } => LogNormal::new(mu, sigma).map_or(f64::NAN, |d| d.inverse_cdf(p)),
        }
    }
}

/// `n` i.i.d. interarrivals. Exponential and Weibull draws invert the CDF,
/// gamma uses Marsaglia and Tsang's squeeze (with the `U^(1/alpha)` boost
/// below shape 1) and log-normal exponentiates a normal draw.
///
/// ```
/// use excursion_pp::eval::{gen_renewal, Renewal};
/// use excursion_pp::rng::RngSeed;
/// let x = gen_renewal(Renewal::Exponential { rate: 1.0 }, 100_000, RngSeed::new(0)).unwrap();
/// let mean = x.iter().sum::<f64>() / x.len() as f64;
/// assert!((mean - 1.0).abs() < 0.02);
/// ```
pub fn gen_renewal(family: Renewal, n: usize, seed: RngSeed) -> Result<Vec<f64>> {
    family.validate()?;
    if n == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let mut rng = seed.rng();
    // 1 - U lies in (0, 1], so the logarithm is finite.
    let exp1 = |rng: &mut crate::rng::StreamRng| -(1.0 - rng.random::<f64>()).ln();
    let out = match family {
        Renewal::Exponential { rate } => (0..n).map(|_| exp1(&mut rng) / rate).collect(),
        Renewal::Weibull { lambda, k } => (0..n).map(|_| lambda * exp1(&mut rng).powf(1.0 / k)).collect(),
        Renewal::Gamma { alpha, beta } => {
            let g = rand_distr::Gamma::new(alpha, beta).map_err(|e| Error::domain(e.to_string()))?;
            (0..n).map(|_| g.sample(&mut rng)).collect()
        }
        Renewal::LogNormal { mu, sigma } => (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (mu + sigma * z).exp()
            })
            .collect(),
    };
    Ok(out)
}

/// Arrival sequence with an arrival at `0` followed by one arrival per
/// duration, so that dropping the first gap leaves exactly `durations`.
pub fn renewal_sequence(durations: &[f64]) -> Result<MarkedArrivals> {
    let mut times = Vec::with_capacity(durations.len() + 1);
    let mut t = 0.0;
    times.push(t);
    for &d in durations {
        t += d;
        times.push(t);
    }
    MarkedArrivals::unmarked(times, 0.0)
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Empirical quantile at level `p` of sorted, nonempty data, interpolating
/// between order statistics placed at levels `(i - 0.5) / n`.
pub fn empirical_quantile(s: &[f64], p: f64) -> f64 {
    let n = s.len();
    let pos = (p * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let w = pos - lo as f64;
    s[lo] + w * (s[hi] - s[lo])
}

/// `(theoretical, empirical)` quantile pairs at levels `(i - 0.5) / m`.
pub fn qq_points(samples: &[f64], quantile: impl Fn(f64) -> f64, n_quantiles: usize) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() || n_quantiles == 0 {
        return Err(Error::invalid("need samples and at least one quantile"));
    }
    let s = sorted(samples);
    Ok((1..=n_quantiles)
        .map(|i| {
            let p = (i as f64 - 0.5) / n_quantiles as f64;
            (quantile(p), empirical_quantile(&s, p))
        })
        .collect())
}

/// `sup |F_n - F|` over the sample points.
///
/// ```
/// use excursion_pp::eval::ks_statistic;
/// assert_eq!(ks_statistic(&[0.5], |x| x.clamp(0.0, 1.0)).unwrap(), 0.5);
/// ```
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let s = sorted(samples);
    let n = s.len() as f64;
    Ok(s.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i + 1) as f64 / n - f).max(f - i as f64 / n)
    }))
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("both samples must be nonempty"));
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// `int |F_a - F_b| dx`, exact for the two empirical distributions.
///
/// ```
/// use excursion_pp::eval::w1_distance;
/// assert_eq!(w1_distance(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
/// ```
pub fn w1_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("both samples must be nonempty"));
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut pts: Vec<f64> = a.iter().chain(&b).copied().collect();
    pts.sort_by(f64::total_cmp);
    let (mut i, mut j, mut total) = (0, 0, 0.0);
    for w in pts.windows(2) {
        while i < a.len() && a[i] <= w[0] {
            i += 1;
        }
        while j < b.len() && b[j] <= w[0] {
            j += 1;
        }
        total += (i as f64 / na - j as f64 / nb).abs() * (w[1] - w[0]);
    }
    Ok(total)
}

/// `int_0^1 |Q_n(p) - Q(p)| dp` for the empirical quantile function `Q_n`
/// of `samples` against a reference quantile function. Each order
/// statistic's probability block is integrated with `sub` midpoints.
pub fn w1_to_reference(samples: &[f64], quantile: impl Fn(f64) -> f64, sub: usize) -> Result<f64> {
    if samples.is_empty() || sub == 0 {
        return Err(Error::invalid("need samples and at least one subdivision"));
    }
    let s = sorted(samples);
    let m = (s.len() * sub) as f64;
    let total: f64 = s
        .iter()
        .enumerate()
        .flat_map(|(i, &x)| (0..sub).map(move |j| (x, (i * sub + j) as f64 + 0.5)))
        .map(|(x, k)| (x - quantile(k / m)).abs())
        .sum();
    Ok(total / m)
}

/// Evenly spaced scalar states on `[lo, hi]`.
pub fn scalar_grid(lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
    if n == 1 {
        return vec![vec![0.5 * (lo + hi)]];
    }
    (0..n)
        .map(|i| vec![lo + (hi - lo) * i as f64 / (n - 1) as f64])
        .collect()
}

/// Mean of `|mu_hat - mu|^2` over the grid divided by the mean of `|mu|^2`.
pub fn drift_relative_mse(fitted: &dyn DriftFn, truth: &dyn DriftFn, grid: &[Vec<f64>], t: f64) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::invalid("empty evaluation grid"));
    }
    let d = truth.dim();
    if fitted.dim() != d || grid.iter().any(|x| x.len() != d) {
        return Err(Error::invalid("drift and grid dimensions differ"));
    }
    let mut ws = DriftWorkspace::default();
    let (mut a, mut b) = (vec![0.0; d], vec![0.0; d]);
    let (mut num, mut den) = (0.0, 0.0);
    for x in grid {
        fitted.eval(x, t, &Context::EMPTY, &mut ws, &mut a);
        truth.eval(x, t, &Context::EMPTY, &mut ws, &mut b);
        for (p, q) in a.iter().zip(&b) {
            num += (p - q) * (p - q);
            den += q * q;
        }
    }
    if den == 0.0 {
        return Err(Error::UndefinedNorm("true drift vanishes on the grid".into()));
    }
    Ok(num / den)
}

/// Average of `|X_t|` over `m` simulated paths of a scalar drift, one value
/// per grid point. Paths run through the arrival sampler so that
/// history-dependent drifts see their own arrivals.
pub fn mean_abs_path(drift: &dyn DriftFn, x0: f64, grid: TimeGrid, cfg: &SimConfig, seed: RngSeed, m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::invalid("need at least one path"));
    }
    let paths = (0..m as u64)
        .into_par_iter()
        .map(|r| {
            let sim = simulate(drift, &[x0], grid, cfg, seed.derive(r), &[], true)?;
            Ok(sim.path.expect("path kept").into_values())
        })
        .collect::<Result<Vec<_>>>()?;
    let n = paths.iter().map(Vec::len).min().unwrap_or(0);
    Ok((0..n)
        .map(|i| paths.iter().map(|p| p[i].abs()).sum::<f64>() / m as f64)
        .collect())
}

/// Least-squares alignment `a * log(m) + b` of a positive mean-path signal
/// with a reference signal on the same grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StimulusFit {
    pub a: f64,
    pub b: f64,
    pub residual_norm: f64,
    pub aligned: Vec<f64>,
}

/// Floor applied before the logarithm.
const LOG_FLOOR: f64 = 1e-12;

pub fn fit_log_transform(mean_signal: &[f64], reference: &[f64]) -> Result<StimulusFit> {
    if mean_signal.len() != reference.len() || mean_signal.len() < 2 {
        return Err(Error::invalid("signals must have equal length of at least 2"));
    }
    let f: Vec<f64> = mean_signal.iter().map(|m| m.max(LOG_FLOOR).ln()).collect();
    let n = f.len() as f64;
    let fm = f.iter().sum::<f64>() / n;
    let ym = reference.iter().sum::<f64>() / n;
    let sxx: f64 = f.iter().map(|x| (x - fm).powi(2)).sum();
    let sxy: f64 = f.iter().zip(reference).map(|(x, y)| (x - fm) * (y - ym)).sum();
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let b = ym - a * fm;
    let aligned: Vec<f64> = f.iter().map(|x| a * x + b).collect();
    let residual_norm = aligned
        .iter()
        .zip(reference)
        .map(|(p, y)| (p - y).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(StimulusFit {
        a,
        b,
        residual_norm,
        aligned,
    })
}

/// Linear interpolation of `(t, v)` samples at `at`, held constant outside.
pub fn interpolate(t: &[f64], v: &[f64], at: &[f64]) -> Result<Vec<f64>> {
    if t.is_empty() || t.len() != v.len() || t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("interpolation needs increasing knots with one value each"));
    }
    Ok(at
        .iter()
        .map(|&x| {
            let j = t.partition_point(|&s| s <= x);
            if j == 0 {
                v[0]
            } else if j == t.len() {
                v[t.len() - 1]
            } else {
                let w = (x - t[j - 1]) / (t[j] - t[j - 1]);
                v[j - 1] + w * (v[j] - v[j - 1])
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::ScalarDrift;
    use proptest::prelude::*;

    fn mean(x: &[f64]) -> f64 {
        x.iter().sum::<f64>() / x.len() as f64
    }

    #[test]
    fn renewal_means() {
        let n = 100_000;
        let g = gen_renewal(Renewal::standard("gamma").unwrap(), n, RngSeed::new(1)).unwrap();
        assert!((mean(&g) - 9.0).abs() < 0.1);
        let w = gen_renewal(Renewal::standard("weibull").unwrap(), n, RngSeed::new(2)).unwrap();
        assert!((mean(&w) - 0.9027).abs() < 0.01);
        assert!((Renewal::standard("weibull").unwrap().mean() - 0.902_745_292_950_933_6).abs() < 1e-12);
        let l = gen_renewal(Renewal::standard("lognormal").unwrap(), n, RngSeed::new(3)).unwrap();
        assert!((mean(&l) - 0.5f64.exp()).abs() < 0.05);
        let small = gen_renewal(Renewal::Gamma { alpha: 0.3, beta: 2.0 }, n, RngSeed::new(4)).unwrap();
        assert!((mean(&small) - 0.6).abs() < 0.02);
        assert!(matches!(
            gen_renewal(Renewal::Exponential { rate: -1.0 }, 5, RngSeed::new(0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn samples_match_their_cdf() {
        for name in ["exponential", "gamma", "weibull", "lognormal"] {
            let r = Renewal::standard(name).unwrap();
            let x = gen_renewal(r, 10_000, RngSeed::new(9)).unwrap();
            let d = ks_statistic(&x, |t| r.cdf(t)).unwrap();
            assert!(d < 1.36 / 100.0, "{name}: {d}");
            for p in [0.1, 0.5, 0.9] {
                assert!((r.cdf(r.quantile(p)) - p).abs() < 1e-8, "{name} {p}");
            }
        }
    }

    #[test]
    fn qq_cases() {
        let r = Renewal::Exponential { rate: 1.0 };
        let x = gen_renewal(r, 10_000, RngSeed::new(5)).unwrap();
        let q = qq_points(&x, |p| r.quantile(p), 20).unwrap();
        let worst = q.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.1, "{worst} {:?}", q.last());
        let c = qq_points(&[2.5; 7], |p| p, 10).unwrap();
        assert!(c.iter().all(|&(_, e)| e == 2.5));
        let m = qq_points(&[3.0, 1.0, 2.0], |p| p, 1).unwrap();
        assert_eq!(m, vec![(0.5, 2.0)]);
        let u: Vec<f64> = (0..50).map(|i| (i as f64 + 0.5) / 50.0).collect();
        let pairs = qq_points(&u, |p| p, 20).unwrap();
        assert!(pairs.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 >= w[0].1));
    }

    #[test]
    fn ks_cases() {
        assert_eq!(ks_statistic(&[0.0; 4], |x| x.clamp(0.0, 1.0)).unwrap(), 1.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks_two_sample(&[0.0], &[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn w1_cases() {
        assert_eq!(w1_distance(&[1.0, 3.0], &[3.0, 1.0]).unwrap(), 0.0);
        assert_eq!(w1_distance(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(w1_distance(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        // Point mass at 0 against Uniform(0, 1) moves mass 1/2 on average.
        assert!((w1_to_reference(&[0.0], |p| p, 1000).unwrap() - 0.5).abs() < 1e-9);
        let r = Renewal::Exponential { rate: 1.0 };
        let x = gen_renewal(r, 20_000, RngSeed::new(8)).unwrap();
        let y = gen_renewal(r, 20_000, RngSeed::new(18)).unwrap();
        let to_ref = w1_to_reference(&x, |p| r.quantile(p), 8).unwrap();
        assert!(to_ref < 0.03, "{to_ref}");
        assert!(w1_distance(&x, &y).unwrap() < 0.04);
    }

    #[test]
    fn relative_mse_cases() {
        let grid = scalar_grid(-2.0, 2.0, 41);
        let mu = ScalarDrift::new(|x, _| -x);
        let twice = ScalarDrift::new(|x, _| -2.0 * x);
        let zero = ScalarDrift::new(|_, _| 0.0);
        assert_eq!(drift_relative_mse(&mu, &mu, &grid, 0.0).unwrap(), 0.0);
        assert!((drift_relative_mse(&twice, &mu, &grid, 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((drift_relative_mse(&zero, &mu, &grid, 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            drift_relative_mse(&mu, &zero, &grid, 0.0),
            Err(Error::UndefinedNorm(_))
        ));
    }

    #[test]
    fn log_transform_recovers_affine_map() {
        let m: Vec<f64> = (1..=20).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = m.iter().map(|v| -2.0 * v.ln() + 0.5).collect();
        let fit = fit_log_transform(&m, &y).unwrap();
        assert!((fit.a + 2.0).abs() < 1e-12 && (fit.b - 0.5).abs() < 1e-12);
        assert!(fit.residual_norm < 1e-12);
        let v = interpolate(&[0.0, 1.0], &[0.0, 2.0], &[-1.0, 0.25, 3.0]).unwrap();
        assert_eq!(v, vec![0.0, 0.5, 2.0]);
    }

    #[test]
    fn renewal_sequence_round_trips() {
        let s = renewal_sequence(&[0.5, 1.0, 0.25]).unwrap();
        let d: Vec<f64> = s
            .interarrivals(crate::arrivals::FirstGap::Drop)
            .iter()
            .map(|i| i.duration)
            .collect();
        assert_eq!(d, vec![0.5, 1.0, 0.25]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn w1_is_a_metric(
            a in prop::collection::vec(-5.0f64..5.0, 1..20),
            b in prop::collection::vec(-5.0f64..5.0, 1..20),
            c in prop::collection::vec(-5.0f64..5.0, 1..20),
        ) {
            let ab = w1_distance(&a, &b).unwrap();
            prop_assert!((ab - w1_distance(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!(ab <= w1_distance(&a, &c).unwrap() + w1_distance(&c, &b).unwrap() + 1e-12);
        }

        #[test]
        fn ks_is_transform_invariant(x in prop::collection::vec(0.01f64..10.0, 1..40)) {
            let r = Renewal::Exponential { rate: 1.0 };
            let d = ks_statistic(&x, |t| r.cdf(t)).unwrap();
            let y: Vec<f64> = x.iter().map(|v| v.ln()).collect();
            let e = ks_statistic(&y, |t| r.cdf(t.exp())).unwrap();
            prop_assert!((d - e).abs() < 1e-12);
        }
    }
}

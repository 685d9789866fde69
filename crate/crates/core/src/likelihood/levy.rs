//! The length law of Brownian δ-excursions: a Lévy distribution with scale
//! `4 delta^2`, `p(tau) = delta sqrt(2 / (pi tau^3)) exp(-2 delta^2 / tau)`.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

fn check(tau: f64, delta: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::domain(format!("tau must be positive, got {tau}")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::domain(format!("delta must be positive, got {delta}")));
    }
    Ok(())
}

/// ```
/// use excursion_pp::likelihood::levy_excursion_density;
/// let p = levy_excursion_density(1.0, 0.5).unwrap();
/// assert!((p - 0.24197).abs() < 1e-5);
/// ```
pub fn levy_excursion_density(tau: f64, delta: f64) -> Result<f64> {
    levy_log_density(tau, delta).map(f64::exp)
}

pub fn levy_log_density(tau: f64, delta: f64) -> Result<f64> {
    check(tau, delta)?;
    Ok(delta.ln() + 0.5 * (2.0 / std::f64::consts::PI).ln() - 1.5 * tau.ln() - 2.0 * delta * delta / tau)
}

/// `P(length <= tau) = 2 Phi(-2 delta / sqrt(tau))`; zero for `tau <= 0`.
pub fn levy_cdf(tau: f64, delta: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    erfc(std::f64::consts::SQRT_2 * delta / tau.sqrt())
}

/// Inverse of [`levy_cdf`] for `p` in `(0, 1)`.
pub fn levy_quantile(p: f64, delta: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probability must lie in (0, 1), got {p}")));
    }
    check(1.0, delta)?;
    let z = Normal::standard().inverse_cdf(1.0 - 0.5 * p);
    Ok((2.0 * delta / z).powi(2))
}

/// `d/d delta` of `sum_i log p(tau_i; delta)`, i.e. `sum_i (1/delta - 4 delta / tau_i)`.
pub fn delta_gradient(delta: f64, taus: &[f64]) -> Result<f64> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::domain(format!("delta must be positive, got {delta}")));
    }
    taus.iter().map(|&t| {
        check(t, delta)?;
        Ok(1.0 / delta - 4.0 * delta / t)
    }).sum()
}

/// Closed-form maximizer of `sum_i log p(tau_i; delta)` over `delta`.
pub fn levy_scale_mle(taus: &[f64]) -> Result<f64> {
    if taus.is_empty() {
        return Err(Error::invalid("need at least one interarrival"));
    }
    let inv: f64 = taus.iter().map(|t| 1.0 / t).sum();
    Ok((taus.len() as f64 / (4.0 * inv)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_value_and_domain() {
        // delta sqrt(2/pi) e^{-1/2} at delta = 1/2, tau = 1.
        let exact = 0.5 * (2.0 / std::f64::consts::PI).sqrt() * (-0.5f64).exp();
        assert!((levy_excursion_density(1.0, 0.5).unwrap() - exact).abs() < 1e-15);
        assert!((exact - 0.24197).abs() < 5e-6);
        assert!(levy_excursion_density(0.0, 0.5).is_err());
        assert!(levy_excursion_density(1.0, 0.0).is_err());
    }

    #[test]
    fn mode_at_four_thirds_delta_squared() {
        let d = 0.5;
        let mode = 4.0 * d * d / 3.0;
        let p = |t| levy_log_density(t, d).unwrap();
        assert!(p(mode) > p(mode * 1.001) && p(mode) > p(mode * 0.999));
        assert!((mode - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn integrates_to_one() {
        // Simpson in u = ln(tau) on a wide window.
        let d = 0.5;
        let (a, b, n) = ((1e-4f64).ln(), (1e14f64).ln(), 20_000);
        let h = (b - a) / n as f64;
        let f = |u: f64| levy_excursion_density(u.exp(), d).unwrap() * u.exp();
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let total = s * h / 3.0 + levy_cdf(1e-4, d);
        // Tail beyond 1e14 has mass ~ 2 * 2d / sqrt(2 pi 1e14).
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn cdf_matches_reference_and_quantile_inverts() {
        assert!((levy_cdf(1.0, 0.5) - 0.317_310_507_862_914).abs() < 1e-10);
        for p in [0.01, 0.3, 0.5, 0.9] {
            let t = levy_quantile(p, 0.1).unwrap();
            assert!((levy_cdf(t, 0.1) - p).abs() < 1e-9);
        }
    }

    #[test]
    fn delta_gradient_values() {
        assert_eq!(delta_gradient(0.5, &[1.0]).unwrap(), 0.0);
        assert_eq!(delta_gradient(1.0, &[1.0]).unwrap(), -3.0);
        assert!(delta_gradient(0.0, &[1.0]).is_err());
        let taus = [0.3, 1.2, 4.0];
        let mle = levy_scale_mle(&taus).unwrap();
        assert!(delta_gradient(mle, &taus).unwrap().abs() < 1e-12);
    }
}

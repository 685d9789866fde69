//! Scale function, expressiveness bound, Lamperti transform and the OU
//! first-passage density.

use super::estimate::log_girsanov_weights;
use crate::drift::{Context, DriftFn, DriftWorkspace};
use crate::error::{Error, Result};
use crate::excursions::ExcursionBatch;

fn scalar_eval(drift: &dyn DriftFn, x: f64, t: f64, ws: &mut DriftWorkspace) -> f64 {
    let mut out = [0.0];
    drift.eval(&[x], t, &Context::EMPTY, ws, &mut out);
    out[0]
}

/// `S(a) = int_0^a exp(-2 int_0^b mu(x, t) dx) db` for unit volatility, by
/// composite Simpson with `quad_points` intervals (rounded up to even). The
/// inner integral is accumulated panel by panel with Simpson's rule.
pub fn scale_function(drift: &dyn DriftFn, a: f64, t: f64, quad_points: usize) -> Result<f64> {
    if drift.dim() != 1 {
        return Err(Error::invalid("scale function needs a scalar drift"));
    }
    if !a.is_finite() {
        return Err(Error::invalid("scale function argument must be finite"));
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    let n = (quad_points.max(2) + 1) & !1;
    let h = a / n as f64;
    let mut ws = DriftWorkspace::default();
    let mut mu = |x: f64| scalar_eval(drift, x, t, &mut ws);
    let mut inner = 0.0;
    let mut integrand = Vec::with_capacity(n + 1);
    integrand.push(1.0);
    let mut left = mu(0.0);
    for j in 1..=n {
        let x0 = (j - 1) as f64 * h;
        let mid = mu(x0 + 0.5 * h);
        let right = mu(x0 + h);
        inner += h / 6.0 * (left + 4.0 * mid + right);
        left = right;
        let v = (-2.0 * inner).exp();
        if !v.is_finite() {
            return Err(Error::Overflow(format!("scale function integrand overflowed at x={}", x0 + h)));
        }
        integrand.push(v);
    }
    let mut s = integrand[0] + integrand[n];
    for (j, v) in integrand.iter().enumerate().take(n).skip(1) {
        s += v * if j % 2 == 1 { 4.0 } else { 2.0 };
    }
    let out = s * h / 3.0;
    if !out.is_finite() {
        return Err(Error::Overflow("scale function value is not finite".into()));
    }
    Ok(out)
}

/// `sqrt(T^2 / 2 * |mean_k M_k|)` over a batch of paths of length `T`.
pub fn expressiveness_bound(drift: &dyn DriftFn, horizon: f64, batch: &ExcursionBatch) -> Result<f64> {
    if (batch.tau() - horizon).abs() > 1e-12 * horizon.abs().max(1.0) {
        return Err(Error::invalid("batch length must equal the horizon"));
    }
    let w = log_girsanov_weights(drift, batch, 0.0, &Context::EMPTY)?;
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    Ok((0.5 * horizon * horizon * mean.abs()).sqrt())
}

/// Density at `t` of the first passage of `dX = -(X - alpha) dt + sqrt(2) dW`
/// from `x0` to its mean `alpha`.
///
/// ```
/// use excursion_pp::likelihood::ou_fht_density;
/// assert!((ou_fht_density(1.0, 0.0, 1.0).unwrap() - 0.3376).abs() < 5e-4);
/// ```
pub fn ou_fht_density(t: f64, x0: f64, alpha: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("time must be positive, got {t}")));
    }
    if alpha == x0 {
        return Err(Error::domain("boundary must differ from the start"));
    }
    let d = (alpha - x0).abs();
    let em1 = (2.0 * t).exp_m1();
    let log = (2.0 * d / (2.0 * std::f64::consts::PI).sqrt()).ln() - 1.5 * em1.ln() + 2.0 * t - d * d / (2.0 * em1);
    Ok(log.exp())
}

/// CDF of [`ou_fht_density`] in closed form: `erfc(|alpha - x0| / (sqrt(2) sqrt(e^{2t} - 1)))`.
pub fn ou_fht_cdf(t: f64, x0: f64, alpha: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let d = (alpha - x0).abs();
    statrs::function::erf::erfc(d / (2.0 * (2.0 * t).exp_m1()).sqrt())
}

/// Lamperti transform of a scalar diffusion `dX = mu dt + sigma dW` to unit
/// volatility, `Y = gamma(X, t) = int_{x_ref}^X du / sigma(u, t)`.
pub struct Lamperti<M, S> {
    mu: M,
    sigma: S,
    x_ref: f64,
    /// Relative step for numerical derivatives.
    pub h: f64,
}

impl<M, S> Lamperti<M, S>
where
    M: Fn(f64, f64) -> f64,
    S: Fn(f64, f64) -> f64,
{
    pub fn new(mu: M, sigma: S, x_ref: f64) -> Self {
        Self {
            mu,
            sigma,
            x_ref,
            h: 1e-5,
        }
    }

    fn sigma_checked(&self, x: f64, t: f64) -> Result<f64> {
        let s = (self.sigma)(x, t);
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::domain(format!("sigma({x}, {t}) = {s} is not positive")));
        }
        Ok(s)
    }

    /// `gamma(x, t)` by adaptive Simpson quadrature.
    pub fn gamma(&self, x: f64, t: f64) -> Result<f64> {
        let f = |u: f64| self.sigma_checked(u, t).map(|s| 1.0 / s);
        adaptive_simpson(&f, self.x_ref, x, 1e-12, 40)
    }

    /// Inverse of [`Lamperti::gamma`] by bracketing and bisection.
    pub fn gamma_inv(&self, y: f64, t: f64) -> Result<f64> {
        let g = |x: f64| self.gamma(x, t).map(|v| v - y);
        let g0 = g(self.x_ref)?;
        if g0 == 0.0 {
            return Ok(self.x_ref);
        }
        // gamma is increasing, so the root lies on the side where g < 0.
        let dir = if g0 < 0.0 { 1.0 } else { -1.0 };
        let mut inner = self.x_ref;
        let mut step = 1.0f64;
        let (lo, hi) = loop {
            let cand = inner + dir * step;
            match g(cand) {
                Ok(v) if v * g0 <= 0.0 => break if dir > 0.0 { (inner, cand) } else { (cand, inner) },
                Ok(_) => {
                    inner = cand;
                    step *= 2.0;
                }
                // Left the domain of sigma: approach its edge from the last valid point.
                Err(Error::Domain(_)) => step *= 0.5,
                Err(e) => return Err(e),
            }
            if !(1e-300..1e300).contains(&step) {
                return Err(Error::domain(format!("cannot bracket gamma^-1({y})")));
            }
        };
        let (mut lo, mut hi) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid)? < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * mid.abs().max(1.0) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Drift of `Y`: `mu / sigma - sigma_x / 2 + gamma_t`, evaluated at
    /// `x = gamma^-1(y, t)`.
    pub fn drift(&self, y: f64, t: f64) -> Result<f64> {
        let x = self.gamma_inv(y, t)?;
        self.drift_at_x(x, t)
    }

    /// Same as [`Lamperti::drift`] but indexed by the original state.
    pub fn drift_at_x(&self, x: f64, t: f64) -> Result<f64> {
        let s = self.sigma_checked(x, t)?;
        let hx = self.h * x.abs().max(1.0);
        let ds_dx = (self.sigma_checked(x + hx, t)? - self.sigma_checked(x - hx, t)?) / (2.0 * hx);
        let ht = self.h * t.abs().max(1.0);
        let dg_dt = (self.gamma(x, t + ht)? - self.gamma(x, t - ht)?) / (2.0 * ht);
        Ok((self.mu)(x, t) / s - 0.5 * ds_dx + dg_dt)
    }
}

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_simpson<F: Fn(f64) -> Result<f64>>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (fa, fb) = (f(a)?, f(b)?);
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> Result<f64>>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm)?, f(rm)?);
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return Ok(left + right + diff / 15.0);
    }
    Ok(recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::ScalarDrift;
    use crate::excursions::sample_pinned_bridges;
    use crate::rng::RngSeed;

    #[test]
    fn scale_function_values() {
        let zero = ScalarDrift::new(|_, _| 0.0);
        assert!((scale_function(&zero, 2.5, 0.0, 64).unwrap() - 2.5).abs() < 1e-12);
        let ou = ScalarDrift::new(|x, _| -x);
        // int_0^1 e^{b^2} db
        let s = scale_function(&ou, 1.0, 0.0, 200).unwrap();
        assert!((s - 1.462_651_745_907_181_6).abs() < 1e-8, "{s}");
        let odd = ScalarDrift::new(|x: f64, _| -x.powi(3) + x.sin());
        let p = scale_function(&odd, 1.3, 0.0, 200).unwrap();
        let m = scale_function(&odd, -1.3, 0.0, 200).unwrap();
        assert!((p + m).abs() < 1e-12);
        let repel = ScalarDrift::new(|x, _| -50.0 * x);
        assert!(matches!(scale_function(&repel, 10.0, 0.0, 100), Err(Error::Overflow(_))));
    }

    #[test]
    fn expressiveness_values() {
        let b = sample_pinned_bridges(2.0, 16, 50, RngSeed::new(0)).unwrap();
        assert_eq!(expressiveness_bound(&ScalarDrift::new(|_, _| 0.0), 2.0, &b).unwrap(), 0.0);
        let c = expressiveness_bound(&ScalarDrift::new(|_, _| 1.0), 2.0, &b).unwrap();
        assert!((c - 2f64.sqrt()).abs() < 1e-12);
        let r = expressiveness_bound(&ScalarDrift::new(|x, _| -x), 2.0, &b).unwrap();
        assert!(r >= 0.0);
    }

    #[test]
    fn ou_density_properties() {
        assert!((ou_fht_density(1.0, 0.0, 1.0).unwrap() - 0.337_587_687_6).abs() < 1e-9);
        assert!(ou_fht_density(1e-3, 0.0, 1.0).unwrap() < 1e-100);
        assert_eq!(ou_fht_density(0.7, 0.0, 1.0).unwrap(), ou_fht_density(0.7, 1.0, 0.0).unwrap());
        assert!(ou_fht_density(0.0, 0.0, 1.0).is_err());
        // The CDF is the integral of the density.
        let (a, b, n) = (1e-6, 2.0, 20_000);
        let h = (b - a) / n as f64;
        let mut s = 0.0;
        for i in 0..n {
            s += ou_fht_density(a + (i as f64 + 0.5) * h, 0.0, 1.0).unwrap() * h;
        }
        assert!((s - ou_fht_cdf(2.0, 0.0, 1.0)).abs() < 1e-7);
    }

    #[test]
    fn lamperti_cases() {
        let c = 2.0;
        let lin = Lamperti::new(|x: f64, _| x.sin(), move |_, _| c, 0.0);
        for y in [-1.0, 0.3, 2.0] {
            let want = (c * y).sin() / c;
            assert!((lin.drift(y, 0.0).unwrap() - want).abs() < 1e-8);
        }
        let geo = Lamperti::new(|_, _| 0.0, |x: f64, _| if x > 0.0 { x } else { f64::NAN }, 1.0);
        for y in [-1.0, 0.0, 1.5] {
            assert!((geo.drift(y, 0.0).unwrap() + 0.5).abs() < 1e-8);
        }
        for x in [0.1, 0.5, 1.0, 3.0, 20.0] {
            let y = geo.gamma(x, 0.0).unwrap();
            assert!((y - x.ln()).abs() < 1e-9);
            assert!((geo.gamma_inv(y, 0.0).unwrap() - x).abs() < 1e-8 * x.max(1.0));
        }
        assert!(geo.gamma(-1.0, 0.0).is_err());
    }
}

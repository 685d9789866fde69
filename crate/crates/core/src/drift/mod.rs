//! Drift families for the latent diffusion `dZ = mu(Z, t) dt + dW`.
//!
//! A [`DriftSpec`] is a declarative description (it is what checkpoints
//! store); a [`ParamVector`] holds the trainable values in the spec's
//! canonical order. [`Drift`] binds the two and provides evaluation plus the
//! vector-Jacobian product with respect to the parameters, which is all the
//! likelihood needs to assemble exact gradients of its discretized sums.

mod mlp;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use mlp::{Activation, MlpCache};
use mlp::Shape;

use crate::error::{Error, Result};
use crate::rng::RngSeed;

/// Which event sequence a kernel drift reacts to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSource {
    /// The process's own arrivals.
    History,
    /// An externally observed event sequence.
    Exogenous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DriftFamily {
    /// `mu = 0`.
    Zero,
    /// `mu = c`, one trainable constant per coordinate.
    Constant,
    /// `mu = A x` with a trainable `d x d` matrix (a scalar `theta` in 1-D).
    Linear,
    /// `mu = -x`.
    Ou,
    /// `mu = -x^3`, elementwise.
    Cubic,
    /// `mu = -tanh(x)`, elementwise.
    Tanh,
    /// `mu = (-x1 - x2, -x2 + 5 x1)`.
    Circle,
    Mlp {
        width: usize,
        depth: usize,
        #[serde(default)]
        activation: Activation,
        /// Fourier feature frequencies applied to every raw input; empty
        /// disables the encoding.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        frequencies: Vec<f64>,
    },
    /// `mu = base(x, t) + w exp(-(t - S_t) / eta)` where `S_t` is the last
    /// event at or before `t`; the kernel term is zero before any event.
    Kernel {
        base: Box<DriftFamily>,
        eta: f64,
        source: KernelSource,
    },
    /// `mu = mu0 t + w (h(t - t1) + h(t - t2))` with `t1`, `t2` the two most
    /// recent own arrivals and `h(s) = exp(-s)` for `s >= 0`.
    HawkesPair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    #[serde(flatten)]
    pub family: DriftFamily,
    pub input_dim: usize,
    #[serde(default)]
    pub time_input: bool,
}

/// Trainable parameters in the canonical order of a [`DriftSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Events visible to a drift evaluation. Both slices are sorted ascending.
#[derive(Clone, Copy, Debug, Default)]
pub struct Context<'a> {
    pub history: &'a [f64],
    pub exogenous: &'a [f64],
}

impl<'a> Context<'a> {
    pub const EMPTY: Context<'static> = Context {
        history: &[],
        exogenous: &[],
    };

    pub fn history(history: &'a [f64]) -> Self {
        Self {
            history,
            exogenous: &[],
        }
    }

    fn events(&self, source: KernelSource) -> &'a [f64] {
        match source {
            KernelSource::History => self.history,
            KernelSource::Exogenous => self.exogenous,
        }
    }

    /// Most recent event at or before `t`.
    pub fn last_event(&self, source: KernelSource, t: f64) -> Option<f64> {
        let ev = self.events(source);
        let n = ev.partition_point(|&e| e <= t);
        n.checked_sub(1).map(|i| ev[i])
    }
}

/// Reusable scratch space for drift evaluation.
#[derive(Clone, Debug, Default)]
pub struct DriftWorkspace {
    input: Vec<f64>,
    features: Vec<f64>,
    mlp: MlpCache,
    kernel_phi: f64,
    hawkes_t: f64,
    hawkes_h: f64,
}

/// Anything that can serve as the drift of a simulation.
pub trait DriftFn: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], t: f64, ctx: &Context<'_>, ws: &mut DriftWorkspace, out: &mut [f64]);
}

/// Adapter turning a plain closure `(x, t) -> mu` into a 1-D [`DriftFn`].
pub struct ScalarDrift<F>(pub F);

impl<F: Fn(f64, f64) -> f64 + Sync> ScalarDrift<F> {
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F: Fn(f64, f64) -> f64 + Sync> DriftFn for ScalarDrift<F> {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64], t: f64, _: &Context<'_>, _: &mut DriftWorkspace, out: &mut [f64]) {
        out[0] = (self.0)(x[0], t);
    }
}

impl DriftFamily {
    fn n_params(&self, d: usize, time_input: bool) -> usize {
        match self {
            DriftFamily::Zero
            | DriftFamily::Ou
            | DriftFamily::Cubic
            | DriftFamily::Tanh
            | DriftFamily::Circle => 0,
            DriftFamily::Constant => d,
            DriftFamily::Linear => d * d,
            DriftFamily::Mlp { .. } => self.mlp_shape(d, time_input).n_params(),
            DriftFamily::Kernel { base, .. } => base.n_params(d, time_input) + 1,
            DriftFamily::HawkesPair => 2,
        }
    }

    fn mlp_shape(&self, d: usize, time_input: bool) -> Shape {
        match self {
            DriftFamily::Mlp {
                width,
                depth,
                frequencies,
                ..
            } => {
                let raw = d + usize::from(time_input);
                Shape::new(raw * (1 + 2 * frequencies.len()), *width, *depth, d)
            }
            _ => unreachable!("not an mlp"),
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        match self {
            DriftFamily::Circle if d != 2 => {
                Err(Error::invalid("circle drift is two-dimensional"))
            }
            DriftFamily::Mlp {
                width,
                depth,
                frequencies,
                ..
            } => {
                if *width == 0 || *depth == 0 {
                    return Err(Error::invalid("mlp width and depth must be at least 1"));
                }
                if frequencies.iter().any(|f| !f.is_finite()) {
                    return Err(Error::invalid("positional-encoding frequencies must be finite"));
                }
                Ok(())
            }
            DriftFamily::Kernel { base, eta, .. } => {
                if !(*eta > 0.0 && eta.is_finite()) {
                    return Err(Error::invalid(format!("kernel width must be positive, got {eta}")));
                }
                if matches!(**base, DriftFamily::Kernel { .. }) {
                    return Err(Error::invalid("kernel drifts do not nest"));
                }
                base.validate(d)
            }
            _ => Ok(()),
        }
    }

    fn name(&self) -> String {
        match self {
            DriftFamily::Zero => "zero".into(),
            DriftFamily::Constant => "constant".into(),
            DriftFamily::Linear => "linear".into(),
            DriftFamily::Ou => "ou".into(),
            DriftFamily::Cubic => "cubic".into(),
            DriftFamily::Tanh => "tanh".into(),
            DriftFamily::Circle => "circle".into(),
            DriftFamily::Mlp { width, depth, .. } => format!("mlp({width}x{depth})"),
            DriftFamily::Kernel { base, .. } => format!("kernel({})", base.name()),
            DriftFamily::HawkesPair => "hawkes_pair".into(),
        }
    }
}

impl DriftSpec {
    pub fn new(family: DriftFamily, input_dim: usize) -> Result<Self> {
        Self::with_time(family, input_dim, false)
    }

    pub fn with_time(family: DriftFamily, input_dim: usize, time_input: bool) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("drift input dimension must be at least 1"));
        }
        family.validate(input_dim)?;
        Ok(Self {
            family,
            input_dim,
            time_input,
        })
    }

    /// Re-checks invariants, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("drift input dimension must be at least 1"));
        }
        self.family.validate(self.input_dim)
    }

    pub fn mlp(width: usize, depth: usize, input_dim: usize) -> Result<Self> {
        Self::new(
            DriftFamily::Mlp {
                width,
                depth,
                activation: Activation::Softplus,
                frequencies: Vec::new(),
            },
            input_dim,
        )
    }

    pub fn dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_params(&self) -> usize {
        self.family.n_params(self.input_dim, self.time_input)
    }

    pub fn name(&self) -> String {
        self.family.name()
    }

    pub fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::invalid(format!(
                "{} expects {} parameters, got {}",
                self.name(),
                self.n_params(),
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("parameter {i} is not finite")));
        }
        Ok(())
    }

    /// Initial parameters: network weights and biases uniform on
    /// `±1/sqrt(fan_in)`, every other trainable scalar uniform on `±0.1`.
    pub fn init_params(&self, seed: RngSeed) -> ParamVector {
        let mut rng = seed.derive(crate::rng::tags::INIT).rng();
        let mut out = Vec::with_capacity(self.n_params());
        init_family(&self.family, self.input_dim, self.time_input, &mut rng, &mut out);
        debug_assert_eq!(out.len(), self.n_params());
        ParamVector(out)
    }

    pub fn bind<'a>(&'a self, params: &'a [f64]) -> Drift<'a> {
        debug_assert_eq!(params.len(), self.n_params());
        Drift { spec: self, params }
    }
}

fn init_family<R: Rng>(
    family: &DriftFamily,
    d: usize,
    time_input: bool,
    rng: &mut R,
    out: &mut Vec<f64>,
) {
    match family {
        DriftFamily::Mlp { .. } => {
            let shape = family.mlp_shape(d, time_input);
            for w in shape.sizes.windows(2) {
                let bound = 1.0 / (w[0] as f64).sqrt();
                out.extend((0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)));
            }
            for w in shape.sizes.windows(2) {
                let bound = 1.0 / (w[0] as f64).sqrt();
                out.extend((0..w[1]).map(|_| rng.random_range(-bound..bound)));
            }
        }
        DriftFamily::Kernel { base, .. } => {
            init_family(base, d, time_input, rng, out);
            out.push(rng.random_range(-0.1..0.1));
        }
        other => {
            let n = other.n_params(d, time_input);
            out.extend((0..n).map(|_| rng.random_range(-0.1..0.1)));
        }
    }
}

/// A spec bound to concrete parameter values.
#[derive(Clone, Copy, Debug)]
pub struct Drift<'a> {
    pub spec: &'a DriftSpec,
    pub params: &'a [f64],
}

impl Drift<'_> {
    /// Evaluates the drift, caching what [`Drift::backward`] needs.
    pub fn forward(&self, x: &[f64], t: f64, ctx: &Context<'_>, ws: &mut DriftWorkspace, out: &mut [f64]) {
        let spec = self.spec;
        forward_family(&spec.family, spec.input_dim, spec.time_input, self.params, x, t, ctx, ws, out);
    }

    /// Adds `upstream . d mu / d params` at the point of the last
    /// [`Drift::forward`] call into `grad`.
    pub fn backward(&self, ws: &mut DriftWorkspace, upstream: &[f64], grad: &mut [f64]) {
        let spec = self.spec;
        backward_family(&spec.family, spec.input_dim, spec.time_input, self.params, ws, upstream, grad);
    }
}

impl DriftFn for Drift<'_> {
    fn dim(&self) -> usize {
        self.spec.input_dim
    }

    fn eval(&self, x: &[f64], t: f64, ctx: &Context<'_>, ws: &mut DriftWorkspace, out: &mut [f64]) {
        self.forward(x, t, ctx, ws, out);
    }
}

/// Convenience one-shot evaluation.
pub fn eval_drift(
    spec: &DriftSpec,
    params: &[f64],
    x: &[f64],
    t: f64,
    ctx: &Context<'_>,
) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    if x.len() != spec.input_dim {
        return Err(Error::invalid(format!(
            "state has dimension {}, drift expects {}",
            x.len(),
            spec.input_dim
        )));
    }
    let mut out = vec![0.0; spec.input_dim];
    spec.bind(params)
        .forward(x, t, ctx, &mut DriftWorkspace::default(), &mut out);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn forward_family(
    family: &DriftFamily,
    d: usize,
    time_input: bool,
    params: &[f64],
    x: &[f64],
    t: f64,
    ctx: &Context<'_>,
    ws: &mut DriftWorkspace,
    out: &mut [f64],
) {
    match family {
        DriftFamily::Zero => out.fill(0.0),
        DriftFamily::Constant => out.copy_from_slice(params),
        DriftFamily::Linear => {
            ws.input.clear();
            ws.input.extend_from_slice(x);
            for (i, o) in out.iter_mut().enumerate() {
                *o = params[i * d..(i + 1) * d]
                    .iter()
                    .zip(x)
                    .map(|(a, x)| a * x)
                    .sum();
            }
        }
        DriftFamily::Ou => {
            for (o, x) in out.iter_mut().zip(x) {
                *o = -x;
            }
        }
        DriftFamily::Cubic => {
            for (o, x) in out.iter_mut().zip(x) {
                *o = -x * x * x;
            }
        }
        DriftFamily::Tanh => {
            for (o, x) in out.iter_mut().zip(x) {
                *o = -x.tanh();
            }
        }
        DriftFamily::Circle => {
            out[0] = -x[0] - x[1];
            out[1] = -x[1] + 5.0 * x[0];
        }
        DriftFamily::Mlp {
            activation,
            frequencies,
            ..
        } => {
            let shape = family.mlp_shape(d, time_input);
            ws.input.clear();
            ws.input.extend_from_slice(x);
            if time_input {
                ws.input.push(t);
            }
            ws.features.clear();
            ws.features.extend_from_slice(&ws.input);
            for &u in &ws.input {
                for &f in frequencies {
                    let arg = std::f64::consts::TAU * f * u;
                    ws.features.push(arg.sin());
                    ws.features.push(arg.cos());
                }
            }
            mlp::forward(&shape, *activation, params, &ws.features, &mut ws.mlp, out);
        }
        DriftFamily::Kernel { base, eta, source } => {
            let nb = base.n_params(d, time_input);
            forward_family(base, d, time_input, &params[..nb], x, t, ctx, ws, out);
            let phi = ctx
                .last_event(*source, t)
                .map_or(0.0, |s| (-(t - s) / eta).exp());
            ws.kernel_phi = phi;
            let w = params[nb];
            for o in out.iter_mut() {
                *o += w * phi;
            }
        }
        DriftFamily::HawkesPair => {
            let n = ctx.history.partition_point(|&e| e <= t);
            let h: f64 = ctx.history[n.saturating_sub(2)..n]
                .iter()
                .map(|&s| (-(t - s)).exp())
                .sum();
            ws.hawkes_t = t;
            ws.hawkes_h = h;
            let v = params[0] * t + params[1] * h;
            out.fill(v);
        }
    }
}

fn backward_family(
    family: &DriftFamily,
    d: usize,
    time_input: bool,
    params: &[f64],
    ws: &mut DriftWorkspace,
    upstream: &[f64],
    grad: &mut [f64],
) {
    match family {
        DriftFamily::Zero
        | DriftFamily::Ou
        | DriftFamily::Cubic
        | DriftFamily::Tanh
        | DriftFamily::Circle => {}
        DriftFamily::Constant => {
            for (g, u) in grad.iter_mut().zip(upstream) {
                *g += u;
            }
        }
        DriftFamily::Linear => {
            for i in 0..d {
                for j in 0..d {
                    grad[i * d + j] += upstream[i] * ws.input[j];
                }
            }
        }
        DriftFamily::Mlp { activation, .. } => {
            let shape = family.mlp_shape(d, time_input);
            mlp::backward(&shape, *activation, params, &mut ws.mlp, upstream, grad);
        }
        DriftFamily::Kernel { base, .. } => {
            let nb = base.n_params(d, time_input);
            backward_family(base, d, time_input, &params[..nb], ws, upstream, &mut grad[..nb]);
            grad[nb] += ws.kernel_phi * upstream.iter().sum::<f64>();
        }
        DriftFamily::HawkesPair => {
            let u: f64 = upstream.iter().sum();
            grad[0] += u * ws.hawkes_t;
            grad[1] += u * ws.hawkes_h;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval1(spec: &DriftSpec, params: &[f64], x: f64, t: f64, ctx: &Context<'_>) -> f64 {
        eval_drift(spec, params, &[x], t, ctx).unwrap()[0]
    }

    #[test]
    fn linear_family() {
        let spec = DriftSpec::new(DriftFamily::Linear, 1).unwrap();
        assert_eq!(eval1(&spec, &[-1.0], 2.0, 0.0, &Context::EMPTY), -2.0);
    }

    #[test]
    fn kernel_over_ou_base() {
        let spec = DriftSpec::new(
            DriftFamily::Kernel {
                base: Box::new(DriftFamily::Ou),
                eta: 1.0,
                source: KernelSource::History,
            },
            1,
        )
        .unwrap();
        let events = [2.0];
        let ctx = Context::history(&events);
        let v = eval1(&spec, &[1.0], 0.0, 3.0, &ctx);
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.36788).abs() < 1e-5);
        // No event yet: kernel term vanishes.
        assert_eq!(eval1(&spec, &[1.0], 0.5, 1.0, &ctx), -0.5);
    }

    #[test]
    fn circle_row() {
        let spec = DriftSpec::new(DriftFamily::Circle, 2).unwrap();
        let v = eval_drift(&spec, &[], &[1.0, 0.0], 0.0, &Context::EMPTY).unwrap();
        assert_eq!(v, vec![-1.0, 5.0]);
        assert!(DriftSpec::new(DriftFamily::Circle, 3).is_err());
    }

    #[test]
    fn fixed_families_have_no_params() {
        for f in [DriftFamily::Zero, DriftFamily::Ou, DriftFamily::Cubic, DriftFamily::Tanh] {
            let spec = DriftSpec::new(f, 3).unwrap();
            assert_eq!(spec.n_params(), 0);
            assert!(spec.init_params(RngSeed::new(1)).is_empty());
        }
        let cubic = DriftSpec::new(DriftFamily::Cubic, 1).unwrap();
        assert_eq!(eval1(&cubic, &[], 2.0, 0.0, &Context::EMPTY), -8.0);
    }

    #[test]
    fn mlp_parameter_count() {
        let spec = DriftSpec::with_time(
            DriftFamily::Mlp {
                width: 64,
                depth: 6,
                activation: Activation::Softplus,
                frequencies: vec![],
            },
            1,
            true,
        )
        .unwrap();
        assert_eq!(spec.n_params(), 21_057);
        assert_eq!(spec.init_params(RngSeed::new(0)).len(), 21_057);
    }

    #[test]
    fn positional_encoding_widens_input_only() {
        let spec = DriftSpec::with_time(
            DriftFamily::Mlp {
                width: 8,
                depth: 2,
                activation: Activation::LeakyRelu,
                frequencies: vec![1.0, 2.0, 4.0],
            },
            1,
            true,
        )
        .unwrap();
        // raw inputs 2, encoded to 2 * (1 + 6) = 14.
        assert_eq!(spec.n_params(), 14 * 8 + 8 * 8 + 8 + 8 + 8 + 1);
    }

    #[test]
    fn init_is_deterministic() {
        let spec = DriftSpec::mlp(16, 3, 1).unwrap();
        assert_eq!(spec.init_params(RngSeed::new(4)), spec.init_params(RngSeed::new(4)));
        assert_ne!(spec.init_params(RngSeed::new(4)), spec.init_params(RngSeed::new(5)));
        let lin = DriftSpec::new(DriftFamily::Linear, 1).unwrap();
        let p = lin.init_params(RngSeed::new(9));
        assert!(p.0[0].abs() < 0.1);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let spec = DriftSpec::new(DriftFamily::Linear, 2).unwrap();
        assert!(eval_drift(&spec, &[0.0; 4], &[1.0], 0.0, &Context::EMPTY).is_err());
        assert!(eval_drift(&spec, &[0.0; 3], &[1.0, 2.0], 0.0, &Context::EMPTY).is_err());
    }

    #[test]
    fn kernel_jumps_by_w_at_events() {
        let spec = DriftSpec::new(
            DriftFamily::Kernel {
                base: Box::new(DriftFamily::Ou),
                eta: 2.0,
                source: KernelSource::History,
            },
            1,
        )
        .unwrap();
        let events = [1.0, 4.0];
        let ctx = Context::history(&events);
        let w = 0.7;
        let before = eval1(&spec, &[w], 0.3, 4.0 - 1e-12, &ctx);
        let at = eval1(&spec, &[w], 0.3, 4.0, &ctx);
        let expected_before = -0.3 + w * (-(3.0f64) / 2.0).exp();
        assert!((before - expected_before).abs() < 1e-9);
        assert!((at - (-0.3 + w)).abs() < 1e-15);
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = DriftSpec::new(
            DriftFamily::Kernel {
                base: Box::new(DriftFamily::Mlp {
                    width: 4,
                    depth: 2,
                    activation: Activation::Softplus,
                    frequencies: vec![],
                }),
                eta: 2.0,
                source: KernelSource::Exogenous,
            },
            1,
        )
        .unwrap();
        let s = serde_json::to_string(&spec).unwrap();
        assert!(s.contains("\"family\":\"kernel\""));
        let back: DriftSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
    }
}

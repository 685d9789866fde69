//! Dense feed-forward network with a hand-written backward pass.
//!
//! Parameter layout (the checkpoint format depends on it): every weight
//! matrix layer by layer, each row-major `out x in`, followed by every bias
//! vector layer by layer.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Softplus,
    LeakyRelu,
}

const LEAKY_SLOPE: f64 = 0.01;

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

/// Layer sizes of a network with `depth` hidden layers of `width` units.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Shape {
    pub sizes: Vec<usize>,
}

impl Shape {
    pub fn new(n_in: usize, width: usize, depth: usize, n_out: usize) -> Self {
        let mut sizes = Vec::with_capacity(depth + 2);
        sizes.push(n_in);
        sizes.extend(std::iter::repeat(width).take(depth));
        sizes.push(n_out);
        Self { sizes }
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_weights(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1]).sum()
    }

    pub fn n_biases(&self) -> usize {
        self.sizes[1..].iter().sum()
    }

    pub fn n_params(&self) -> usize {
        self.n_weights() + self.n_biases()
    }

    /// Offsets of layer `l`'s weight block and bias block.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let w: usize = self.sizes[..=l]
            .windows(2)
            .map(|w| w[0] * w[1])
            .sum();
        let b: usize = self.n_weights() + self.sizes[1..=l].iter().sum::<usize>();
        (w, b)
    }
}

/// Activation cache of the most recent forward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    /// Post-activation outputs per layer; entry 0 is the input.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl MlpCache {
    fn ensure(&mut self, shape: &Shape) {
        if self.acts.len() != shape.sizes.len() {
            self.acts = shape.sizes.iter().map(|&n| vec![0.0; n]).collect();
            self.pre = shape.sizes.iter().map(|&n| vec![0.0; n]).collect();
            let widest = *shape.sizes.iter().max().unwrap_or(&1);
            self.delta = vec![0.0; widest];
            self.delta_next = vec![0.0; widest];
        }
    }
}

pub(crate) fn forward(
    shape: &Shape,
    act: Activation,
    params: &[f64],
    input: &[f64],
    cache: &mut MlpCache,
    out: &mut [f64],
) {
    cache.ensure(shape);
    cache.acts[0].copy_from_slice(input);
    let last = shape.n_layers() - 1;
    for l in 0..shape.n_layers() {
        let (n_in, n_out) = (shape.sizes[l], shape.sizes[l + 1]);
        let (wo, bo) = shape.offsets(l);
        let w = &params[wo..wo + n_in * n_out];
        let b = &params[bo..bo + n_out];
        let (prev, rest) = cache.acts.split_at_mut(l + 1);
        let a_in = &prev[l];
        let a_out = &mut rest[0];
        let pre = &mut cache.pre[l + 1];
        for j in 0..n_out {
            let row = &w[j * n_in..(j + 1) * n_in];
            let z = b[j] + row.iter().zip(a_in).map(|(w, a)| w * a).sum::<f64>();
            pre[j] = z;
            a_out[j] = if l == last { z } else { act.apply(z) };
        }
    }
    out.copy_from_slice(&cache.acts[shape.n_layers()]);
}

/// Accumulates `upstream . d(out)/d(params)` into `grad`, using the cache
/// written by the preceding [`forward`] call.
pub(crate) fn backward(
    shape: &Shape,
    act: Activation,
    params: &[f64],
    cache: &mut MlpCache,
    upstream: &[f64],
    grad: &mut [f64],
) {
    let n_layers = shape.n_layers();
    let MlpCache {
        acts,
        pre,
        delta,
        delta_next,
    } = cache;
    delta[..upstream.len()].copy_from_slice(upstream);
    for l in (0..n_layers).rev() {
        let (n_in, n_out) = (shape.sizes[l], shape.sizes[l + 1]);
        let (wo, bo) = shape.offsets(l);
        let a_in = &acts[l];
        for j in 0..n_out {
            let d = delta[j];
            grad[bo + j] += d;
            let g_row = &mut grad[wo + j * n_in..wo + (j + 1) * n_in];
            for (g, a) in g_row.iter_mut().zip(a_in) {
                *g += d * a;
            }
        }
        if l > 0 {
            let w = &params[wo..wo + n_in * n_out];
            for i in 0..n_in {
                let mut s = 0.0;
                for j in 0..n_out {
                    s += w[j * n_in + i] * delta[j];
                }
                delta_next[i] = s * act.derivative(pre[l][i]);
            }
            std::mem::swap(delta, delta_next);
        }
    }
}

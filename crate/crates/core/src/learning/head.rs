//! Trainable affine projection `activation(W·x + b)` standing in for the
//! encoder.

use rand_distr::{Distribution, Normal};

use crate::config::Activation;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::vector::Vector;

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead {
    d_in: usize,
    d_out: usize,
    /// Row-major `d_out × d_in`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

/// Gradient with the same layout as the head parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl HeadGrad {
    pub fn zeros_like(head: &ProjectionHead) -> Self {
        HeadGrad {
            weights: vec![0.0; head.weights.len()],
            bias: vec![0.0; head.bias.len()],
        }
    }

    /// Flattened `[weights..., bias...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.bias).copied().collect()
    }
}

impl ProjectionHead {
    pub fn new(d_in: usize, d_out: usize, weights: Vec<f64>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Shape("head dimensions must be positive".into()));
        }
        if weights.len() != d_in * d_out || bias.len() != d_out {
            return Err(Error::Shape(format!(
                "head {d_out}x{d_in} needs {} weights and {d_out} biases, got {} and {}",
                d_in * d_out,
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("head parameters"));
        }
        Ok(ProjectionHead {
            d_in,
            d_out,
            weights,
            bias,
            activation,
        })
    }

    /// `W = I` (truncated to the rectangle), `b = 0`.
    pub fn identity(d_in: usize, d_out: usize, activation: Activation) -> Self {
        let mut weights = vec![0.0; d_in * d_out];
        for i in 0..d_in.min(d_out) {
            weights[i * d_in + i] = 1.0;
        }
        ProjectionHead {
            d_in,
            d_out,
            weights,
            bias: vec![0.0; d_out],
            activation,
        }
    }

    /// Identity plus seeded Gaussian noise of standard deviation `noise` on
    /// every weight.
    pub fn init(d_in: usize, d_out: usize, activation: Activation, noise: f64, seed: u64) -> Result<Self> {
        let mut head = Self::identity(d_in, d_out, activation);
        if noise > 0.0 {
            let normal = Normal::new(0.0, noise).map_err(|e| Error::Config(e.to_string()))?;
            let mut rng = rng::stream(seed, Stream::HeadInit);
            for w in &mut head.weights {
                *w += normal.sample(&mut rng);
            }
        }
        Ok(head)
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn params(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.bias).copied().collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("head parameters"));
        }
        let (w, b) = flat.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
        Ok(())
    }

    pub(crate) fn forward_slice(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.d_in)) {
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        if self.activation == Activation::Tanh {
            out.iter_mut().for_each(|o| *o = o.tanh());
        }
        out
    }

    pub fn forward(&self, x: &Vector) -> Result<Vector> {
        if x.dim() != self.d_in {
            return Err(Error::Dimension {
                expected: self.d_in,
                actual: x.dim(),
            });
        }
        Vector::new(self.forward_slice(x.as_slice()))
    }

    /// Embeds many inputs; fails on dimension mismatch or non-finite output.
    pub fn embed_all<V: AsRef<[f64]>>(&self, inputs: &[V]) -> Result<Vec<Vector>> {
        inputs
            .iter()
            .map(|x| {
                let x = x.as_ref();
                if x.len() != self.d_in {
                    return Err(Error::Dimension {
                        expected: self.d_in,
                        actual: x.len(),
                    });
                }
                Vector::new(self.forward_slice(x))
            })
            .collect()
    }

    /// Adds the parameter gradient of one instance, given its input, its
    /// output and the loss gradient w.r.t. that output.
    pub(crate) fn accumulate_grad(&self, x: &[f64], output: &[f64], grad_out: &[f64], acc: &mut HeadGrad) {
        let rows = acc.weights.chunks_exact_mut(self.d_in).zip(acc.bias.iter_mut());
        for ((g, z), (w_row, b_acc)) in grad_out.iter().zip(output).zip(rows) {
            let delta = match self.activation {
                Activation::Identity => *g,
                Activation::Tanh => g * (1.0 - z * z),
            };
            *b_acc += delta;
            for (w, v) in w_row.iter_mut().zip(x) {
                *w += delta * v;
            }
        }
    }
}

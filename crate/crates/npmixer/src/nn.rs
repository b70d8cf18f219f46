//! Small neural-network building blocks on top of the tape: linear layers
//! and layer normalization, with fan-in uniform initialization.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Graph, Param, Real, Tensor};

/// Fan-in uniform initialization: `U(−1/√fan_in, 1/√fan_in)`.
pub fn uniform_fan_in(rng: &mut impl Rng, fan_in: usize, n: usize) -> Vec<Real> {
    let bound = 1.0 / (fan_in.max(1) as Real).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Dense layer `y = x·W + b` with `W: [in, out]`, `b: [out]`.
pub struct Linear {
    pub w: Param,
    pub b: Param,
}

impl Linear {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Linear {
            w: Param::new(
                format!("{name}.w"),
                uniform_fan_in(rng, in_dim, in_dim * out_dim),
                &[in_dim, out_dim],
            ),
            b: Param::new(format!("{name}.b"), uniform_fan_in(rng, in_dim, out_dim), &[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape[1]
    }

    /// Bind parameters into `g` once; the binding can then be applied to any
    /// number of inputs in that forward pass (weight sharing).
    pub fn bind(&self, g: &Graph) -> LinearBind {
        LinearBind { w: self.w.leaf(g), b: self.b.leaf(g) }
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

pub struct LinearBind {
    w: Tensor,
    b: Tensor,
}

impl LinearBind {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w)?.add_bias(&self.b)
    }
}

/// Layer normalization parameters (affine over the last dimension).
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: Real,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: Param::new(format!("{name}.gamma"), vec![1.0; dim], &[dim]),
            beta: Param::new(format!("{name}.beta"), vec![0.0; dim], &[dim]),
            eps: 1e-5,
        }
    }

    pub fn bind(&self, g: &Graph) -> LayerNormBind {
        LayerNormBind { gamma: self.gamma.leaf(g), beta: self.beta.leaf(g), eps: self.eps }
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

pub struct LayerNormBind {
    gamma: Tensor,
    beta: Tensor,
    eps: Real,
}

impl LayerNormBind {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gamma, &self.beta, self.eps)
    }
}

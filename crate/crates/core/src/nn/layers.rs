use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::matrix::Matrix;
use super::{ParamSlot, Parameterized};
use crate::error::{Error, Result};

/// Fully connected layer `y = W x + b` with `W` stored `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    name: String,
    in_dim: usize,
    out_dim: usize,
    pub(crate) weights: Vec<f64>,
    pub(crate) bias: Vec<f64>,
    pub(crate) grad_weights: Vec<f64>,
    pub(crate) grad_bias: Vec<f64>,
    vel_weights: Vec<f64>,
    vel_bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        DenseLayer {
            name: name.into(),
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            grad_weights: vec![0.0; in_dim * out_dim],
            grad_bias: vec![0.0; out_dim],
            vel_weights: vec![0.0; in_dim * out_dim],
            vel_bias: vec![0.0; out_dim],
        }
    }

    /// He-normal weights (std `sqrt(2 / in_dim)`), zero bias.
    pub fn he_init<R: Rng + ?Sized>(
        name: impl Into<String>,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(name, in_dim, out_dim);
        let normal = Normal::new(0.0, (2.0 / in_dim as f64).sqrt()).expect("positive std");
        for w in &mut layer.weights {
            *w = normal.sample(rng);
        }
        layer
    }

    pub fn from_parts(
        name: impl Into<String>,
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let name = name.into();
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "{name}: parameter lengths ({}, {}) do not fit {out_dim}x{in_dim}",
                weights.len(),
                bias.len()
            )));
        }
        let mut layer = Self::zeros(name, in_dim, out_dim);
        layer.weights = weights;
        layer.bias = bias;
        Ok(layer)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn grad_weights(&self) -> &[f64] {
        &self.grad_weights
    }

    pub fn grad_bias(&self) -> &[f64] {
        &self.grad_bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.forward_rows(x, self.out_dim)
    }

    /// Computes only the first `outputs` units; rows past that are never read.
    pub fn forward_rows(&self, x: &Matrix, outputs: usize) -> Result<Matrix> {
        if x.cols() != self.in_dim {
            return Err(Error::Shape(format!(
                "{} expects {} inputs, got {}",
                self.name,
                self.in_dim,
                x.cols()
            )));
        }
        debug_assert!(outputs <= self.out_dim);
        let mut y = Matrix::zeros(x.rows(), outputs);
        for (r, xr) in x.iter_rows().enumerate() {
            let yr = y.row_mut(r);
            for (o, yo) in yr.iter_mut().enumerate() {
                let w = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                *yo = self.bias[o] + dot(w, xr);
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients (when `accumulate`) and returns the
    /// gradient with respect to the input.
    pub fn backward(&mut self, x: &Matrix, dy: &Matrix, accumulate: bool) -> Result<Matrix> {
        if x.cols() != self.in_dim || dy.cols() != self.out_dim || x.rows() != dy.rows() {
            return Err(Error::Shape(format!(
                "{}: backward got input {}x{} and output grad {}x{}",
                self.name,
                x.rows(),
                x.cols(),
                dy.rows(),
                dy.cols()
            )));
        }
        let mut dx = Matrix::zeros(x.rows(), self.in_dim);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let dyr = dy.row(r);
            for (o, &g) in dyr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let w = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                for (d, wi) in dx.row_mut(r).iter_mut().zip(w) {
                    *d += g * wi;
                }
                if accumulate {
                    self.grad_bias[o] += g;
                    let gw = &mut self.grad_weights[o * self.in_dim..(o + 1) * self.in_dim];
                    for (gwi, xi) in gw.iter_mut().zip(xr) {
                        *gwi += g * xi;
                    }
                }
            }
        }
        Ok(dx)
    }
}

impl Parameterized for DenseLayer {
    fn params_mut(&mut self) -> Vec<ParamSlot<'_>> {
        vec![
            ParamSlot {
                name: format!("{}.weight", self.name),
                values: &mut self.weights,
                grads: &mut self.grad_weights,
                velocity: &mut self.vel_weights,
            },
            ParamSlot {
                name: format!("{}.bias", self.name),
                values: &mut self.bias,
                grads: &mut self.grad_bias,
                velocity: &mut self.vel_bias,
            },
        ]
    }
}

/// Batch normalization with learnable scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    name: String,
    dim: usize,
    pub(crate) gamma: Vec<f64>,
    pub(crate) beta: Vec<f64>,
    pub(crate) running_mean: Vec<f64>,
    pub(crate) running_var: Vec<f64>,
    pub(crate) eps: f64,
    pub(crate) momentum: f64,
    grad_gamma: Vec<f64>,
    grad_beta: Vec<f64>,
    vel_gamma: Vec<f64>,
    vel_beta: Vec<f64>,
}

/// Per-pass values a train-mode batch-norm forward needs for backward.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub(crate) normalized: Matrix,
    pub(crate) inv_std: Vec<f64>,
    pub(crate) batch_mean: Vec<f64>,
    pub(crate) batch_var: Vec<f64>,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

impl BatchNormLayer {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        BatchNormLayer {
            name: name.into(),
            dim,
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            eps: BN_EPSILON,
            momentum: BN_MOMENTUM,
            grad_gamma: vec![0.0; dim],
            grad_beta: vec![0.0; dim],
            vel_gamma: vec![0.0; dim],
            vel_beta: vec![0.0; dim],
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        name: impl Into<String>,
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
        eps: f64,
        momentum: f64,
    ) -> Result<Self> {
        let name = name.into();
        let dim = gamma.len();
        if beta.len() != dim || running_mean.len() != dim || running_var.len() != dim {
            return Err(Error::Shape(format!("{name}: batch-norm vectors differ in length")));
        }
        if !(eps > 0.0) || running_var.iter().any(|v| *v < 0.0) {
            return Err(Error::Format(format!("{name}: invalid batch-norm statistics")));
        }
        let mut layer = Self::new(name, dim);
        layer.gamma = gamma;
        layer.beta = beta;
        layer.running_mean = running_mean;
        layer.running_var = running_var;
        layer.eps = eps;
        layer.momentum = momentum;
        Ok(layer)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn gamma_mut(&mut self) -> &mut [f64] {
        &mut self.gamma
    }

    pub fn beta_mut(&mut self) -> &mut [f64] {
        &mut self.beta
    }

    pub fn running_mean(&self) -> &[f64] {
        &self.running_mean
    }

    pub fn running_var(&self) -> &[f64] {
        &self.running_var
    }

    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    /// Normalizes with batch statistics (biased variance).
    pub fn forward_train(&self, x: &Matrix) -> Result<(Matrix, BatchNormCache)> {
        self.check_cols(x)?;
        if x.rows() < 2 {
            return Err(Error::InvalidBatch(format!(
                "{}: train-mode batch normalization needs at least 2 samples, got {}",
                self.name,
                x.rows()
            )));
        }
        let n = x.rows() as f64;
        let mean = x.column_means();
        let mut var = vec![0.0; self.dim];
        for row in x.iter_rows() {
            for ((v, xi), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = xi - m;
                *v += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut normalized = Matrix::zeros(x.rows(), self.dim);
        let mut y = Matrix::zeros(x.rows(), self.dim);
        for r in 0..x.rows() {
            let xr = x.row(r);
            for j in 0..self.dim {
                let h = (xr[j] - mean[j]) * inv_std[j];
                normalized.row_mut(r)[j] = h;
                y.row_mut(r)[j] = self.gamma[j] * h + self.beta[j];
            }
        }
        Ok((
            y,
            BatchNormCache {
                normalized,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        ))
    }

    /// Normalizes with the running statistics.
    pub fn forward_infer(&self, x: &Matrix) -> Result<Matrix> {
        self.check_cols(x)?;
        let mut y = Matrix::zeros(x.rows(), self.dim);
        for r in 0..x.rows() {
            let xr = x.row(r);
            for j in 0..self.dim {
                let h = (xr[j] - self.running_mean[j]) / (self.running_var[j] + self.eps).sqrt();
                y.row_mut(r)[j] = self.gamma[j] * h + self.beta[j];
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, cache: &BatchNormCache, dy: &Matrix, accumulate: bool) -> Result<Matrix> {
        if dy.cols() != self.dim || dy.rows() != cache.normalized.rows() {
            return Err(Error::Shape(format!(
                "{}: backward got output grad {}x{}",
                self.name,
                dy.rows(),
                dy.cols()
            )));
        }
        let n = dy.rows() as f64;
        let mut sum_dy = vec![0.0; self.dim];
        let mut sum_dy_h = vec![0.0; self.dim];
        for r in 0..dy.rows() {
            let h = cache.normalized.row(r);
            for (j, g) in dy.row(r).iter().enumerate() {
                sum_dy[j] += g;
                sum_dy_h[j] += g * h[j];
            }
        }
        if accumulate {
            for j in 0..self.dim {
                self.grad_beta[j] += sum_dy[j];
                self.grad_gamma[j] += sum_dy_h[j];
            }
        }
        let mut dx = Matrix::zeros(dy.rows(), self.dim);
        for r in 0..dy.rows() {
            let h = cache.normalized.row(r);
            let g = dy.row(r);
            let out = dx.row_mut(r);
            for j in 0..self.dim {
                out[j] = self.gamma[j] * cache.inv_std[j] / n
                    * (n * g[j] - sum_dy[j] - h[j] * sum_dy_h[j]);
            }
        }
        Ok(dx)
    }

    /// Folds the batch statistics of a train-mode pass into the running ones.
    pub fn update_running_stats(&mut self, cache: &BatchNormCache) {
        let m = self.momentum;
        for j in 0..self.dim {
            self.running_mean[j] = m * self.running_mean[j] + (1.0 - m) * cache.batch_mean[j];
            self.running_var[j] = m * self.running_var[j] + (1.0 - m) * cache.batch_var[j];
        }
    }

    fn check_cols(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dim {
            return Err(Error::Shape(format!(
                "{} expects {} inputs, got {}",
                self.name,
                self.dim,
                x.cols()
            )));
        }
        Ok(())
    }
}

impl Parameterized for BatchNormLayer {
    fn params_mut(&mut self) -> Vec<ParamSlot<'_>> {
        vec![
            ParamSlot {
                name: format!("{}.gamma", self.name),
                values: &mut self.gamma,
                grads: &mut self.grad_gamma,
                velocity: &mut self.vel_gamma,
            },
            ParamSlot {
                name: format!("{}.beta", self.name),
                values: &mut self.beta,
                grads: &mut self.grad_beta,
                velocity: &mut self.vel_beta,
            },
        ]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn relu_in_place(m: &mut Matrix) {
    for v in m.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries whose rectified output was not positive.
pub(crate) fn relu_backward_in_place(activated: &Matrix, grad: &mut Matrix) {
    for (g, a) in grad.as_mut_slice().iter_mut().zip(activated.as_slice()) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

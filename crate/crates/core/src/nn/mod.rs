//! A small dense-network engine: forward passes with recorded tapes,
//! analytic backward, momentum SGD, checkpoints and a finite-difference
//! gradient checker.

mod checkpoint;
pub mod gradcheck;
mod layers;
mod matrix;
mod networks;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{BatchNormCache, BatchNormLayer, DenseLayer, BN_EPSILON, BN_MOMENTUM};
pub use matrix::Matrix;
pub use networks::{DiscTape, Discriminator, GanModels, GenMode, GenTape, Generator, Head, InputNorm};

use crate::error::{Error, Result};

/// One named parameter tensor with its gradient and momentum buffers.
pub struct ParamSlot<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    pub grads: &'a mut [f64],
    pub velocity: &'a mut [f64],
}

/// Anything that exposes trainable parameters.
pub trait Parameterized {
    fn params_mut(&mut self) -> Vec<ParamSlot<'_>>;

    fn zero_grad(&mut self) {
        for slot in self.params_mut() {
            slot.grads.fill(0.0);
        }
    }

    /// Flat copy of every parameter value, in slot order.
    fn param_vector(&mut self) -> Vec<f64> {
        self.params_mut()
            .into_iter()
            .flat_map(|s| s.values.to_vec())
            .collect()
    }

    /// Flat copy of every gradient, in slot order.
    fn grad_vector(&mut self) -> Vec<f64> {
        self.params_mut()
            .into_iter()
            .flat_map(|s| s.grads.to_vec())
            .collect()
    }

    fn num_params(&mut self) -> usize {
        self.params_mut().iter().map(|s| s.values.len()).sum()
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|o| (o - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log softmax(logits)[index]`.
pub fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|o| (o - max).exp()).sum::<f64>().ln() + max;
    logits[index] - lse
}

/// Single-sample discriminator pass returning `(fc7 activation, logits)`.
pub fn disc_forward(d: &Discriminator, x: &[f64], head: Head) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite input at index {i}")));
    }
    let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
    let tape = d.forward(&m, head)?;
    Ok((tape.embedding().row(0).to_vec(), tape.logits().row(0).to_vec()))
}

/// Generator pass over a batch of noise vectors.
pub fn gen_forward(g: &Generator, noise: &[Vec<f64>], mode: GenMode) -> Result<Vec<Vec<f64>>> {
    let m = Matrix::from_rows(noise)?;
    let out = g.forward(&m, mode)?;
    Ok(out.iter_rows().map(<[f64]>::to_vec).collect())
}

/// Momentum SGD: `v <- momentum * v + g`, `p <- p - lr * v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
        }
    }

    pub fn step<M: Parameterized + ?Sized>(&self, net: &mut M) -> Result<()> {
        let mut slots = net.params_mut();
        if let Some(bad) = slots.iter().find(|s| s.grads.iter().any(|g| !g.is_finite())) {
            return Err(Error::Divergence {
                location: format!("gradient of {}", bad.name),
            });
        }
        for slot in slots.iter_mut() {
            for ((p, g), v) in slot
                .values
                .iter_mut()
                .zip(slot.grads.iter())
                .zip(slot.velocity.iter_mut())
            {
                *v = self.momentum * *v + g;
                *p -= self.learning_rate * *v;
            }
            if slot.values.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence {
                    location: format!("parameters of {}", slot.name),
                });
            }
        }
        Ok(())
    }
}

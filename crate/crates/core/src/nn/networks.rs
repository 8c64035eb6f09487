use rand::Rng;

use super::layers::{relu_backward_in_place, relu_in_place, BatchNormCache, BatchNormLayer, DenseLayer};
use super::matrix::Matrix;
use super::{ParamSlot, Parameterized};
use crate::error::{Error, Result};
use crate::types::ModelConfig;

/// Which classifier head a discriminator pass produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// All `K + 2` logits, including the hard-negative class.
    Train,
    /// `K + 1` logits; the hard-negative row of FC8 is never evaluated.
    Infer,
}

/// Fixed per-feature standardization `(x - shift) * scale`. Not trained.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    shift: Vec<f64>,
    scale: Vec<f64>,
}

impl InputNorm {
    pub fn identity(dim: usize) -> Self {
        InputNorm {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn from_parts(shift: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if shift.len() != scale.len() {
            return Err(Error::Shape(format!(
                "normalization shift has {} entries, scale {}",
                shift.len(),
                scale.len()
            )));
        }
        if shift.iter().chain(&scale).any(|v| !v.is_finite()) || scale.iter().any(|s| *s <= 0.0) {
            return Err(Error::Data("normalization needs finite shifts and positive scales".into()));
        }
        Ok(InputNorm { shift, scale })
    }

    /// Per-dimension mean and inverse standard deviation of `rows`. Constant
    /// dimensions keep scale 1.
    pub fn fit<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for row in rows {
            if row.len() != dim {
                return Err(Error::Shape(format!("row of length {} for dim {dim}", row.len())));
            }
            for ((s, q), x) in sum.iter_mut().zip(sq.iter_mut()).zip(row) {
                *s += x;
                *q += x * x;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Data("cannot fit a normalization on zero rows".into()));
        }
        let shift: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let scale = sq
            .iter()
            .zip(&shift)
            .map(|(q, m)| {
                let std = (q / n as f64 - m * m).max(0.0).sqrt();
                if std > 1e-8 {
                    1.0 / std
                } else {
                    1.0
                }
            })
            .collect();
        InputNorm::from_parts(shift, scale)
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                x.cols(),
                self.dim()
            )));
        }
        let mut out = x.clone();
        for row in out.as_mut_slice().chunks_mut(self.dim().max(1)) {
            for ((v, m), s) in row.iter_mut().zip(&self.shift).zip(&self.scale) {
                *v = (*v - m) * s;
            }
        }
        Ok(out)
    }
}

/// Classifier over window features: input normalization -> FC6 -> ReLU ->
/// FC7 -> ReLU -> FC8.
///
/// The FC7 activation doubles as the embedding used by the temporal
/// consistency and feature-matching losses.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub input_norm: InputNorm,
    pub fc6: DenseLayer,
    pub fc7: DenseLayer,
    pub fc8: DenseLayer,
}

/// Activations of one discriminator pass, kept for backward.
#[derive(Debug, Clone)]
pub struct DiscTape {
    head: Head,
    /// Normalized input.
    input: Matrix,
    fc6: Matrix,
    fc7: Matrix,
    logits: Matrix,
}

impl DiscTape {
    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input(&self) -> &Matrix {
        &self.input
    }

    /// Rectified FC7 activations, one row per sample.
    pub fn embedding(&self) -> &Matrix {
        &self.fc7
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        Discriminator {
            input_norm: InputNorm::identity(cfg.feature_dim),
            fc6: DenseLayer::he_init("fc6", cfg.feature_dim, cfg.fc_hidden_dim, rng),
            fc7: DenseLayer::he_init("fc7", cfg.fc_hidden_dim, cfg.fc_hidden_dim, rng),
            fc8: DenseLayer::he_init("fc8", cfg.fc_hidden_dim, cfg.train_outputs(), rng),
        }
    }

    pub fn from_layers(fc6: DenseLayer, fc7: DenseLayer, fc8: DenseLayer) -> Result<Self> {
        if fc6.out_dim() != fc7.in_dim() || fc7.out_dim() != fc8.in_dim() {
            return Err(Error::Shape("discriminator layers do not chain".into()));
        }
        if fc8.out_dim() < 3 {
            return Err(Error::Shape(format!(
                "fc8 needs K + 2 >= 3 outputs, has {}",
                fc8.out_dim()
            )));
        }
        Ok(Discriminator {
            input_norm: InputNorm::identity(fc6.in_dim()),
            fc6,
            fc7,
            fc8,
        })
    }

    pub fn with_input_norm(mut self, norm: InputNorm) -> Result<Self> {
        if norm.dim() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "normalization over {} features for a {}-feature network",
                norm.dim(),
                self.feature_dim()
            )));
        }
        self.input_norm = norm;
        Ok(self)
    }

    pub fn feature_dim(&self) -> usize {
        self.fc6.in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.fc7.out_dim()
    }

    pub fn num_actions(&self) -> usize {
        self.fc8.out_dim() - 2
    }

    pub fn forward(&self, x: &Matrix, head: Head) -> Result<DiscTape> {
        let x = self.input_norm.apply(x)?;
        let (fc6, fc7) = self.embed_layers(&x)?;
        let outputs = match head {
            Head::Train => self.fc8.out_dim(),
            Head::Infer => self.fc8.out_dim() - 1,
        };
        let logits = self.fc8.forward_rows(&fc7, outputs)?;
        Ok(DiscTape {
            head,
            input: x,
            fc6,
            fc7,
            logits,
        })
    }

    /// Input -> FC7 path only.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.embed_layers(&self.input_norm.apply(x)?)?.1)
    }

    fn embed_layers(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut h6 = self.fc6.forward(x)?;
        relu_in_place(&mut h6);
        let mut h7 = self.fc7.forward(&h6)?;
        relu_in_place(&mut h7);
        Ok((h6, h7))
    }

    /// Back-propagates gradients arriving at the logits and/or the FC7
    /// embedding. Parameter gradients are accumulated only when
    /// `accumulate` is set; the input gradient is always returned.
    pub fn backward(
        &mut self,
        tape: &DiscTape,
        d_logits: Option<&Matrix>,
        d_embedding: Option<&Matrix>,
        accumulate: bool,
    ) -> Result<Matrix> {
        if tape.head != Head::Train {
            return Err(Error::State(
                "backward needs a train-head forward pass; inference passes keep no K+2 logits"
                    .into(),
            ));
        }
        if tape.input.cols() != self.feature_dim() || tape.fc7.cols() != self.hidden_dim() {
            return Err(Error::State("tape was recorded on a different network".into()));
        }
        let n = tape.input.rows();
        let mut d7 = match d_logits {
            Some(g) => self.fc8.backward(&tape.fc7, g, accumulate)?,
            None => Matrix::zeros(n, self.hidden_dim()),
        };
        if let Some(extra) = d_embedding {
            if extra.rows() != n || extra.cols() != self.hidden_dim() {
                return Err(Error::Shape("embedding gradient shape mismatch".into()));
            }
            for (a, b) in d7.as_mut_slice().iter_mut().zip(extra.as_slice()) {
                *a += b;
            }
        }
        relu_backward_in_place(&tape.fc7, &mut d7);
        let mut d6 = self.fc7.backward(&tape.fc6, &d7, accumulate)?;
        relu_backward_in_place(&tape.fc6, &mut d6);
        let mut dx = self.fc6.backward(&tape.input, &d6, accumulate)?;
        let dim = self.feature_dim().max(1);
        for row in dx.as_mut_slice().chunks_mut(dim) {
            for (v, s) in row.iter_mut().zip(self.input_norm.scale()) {
                *v *= s;
            }
        }
        Ok(dx)
    }
}

impl Parameterized for Discriminator {
    fn params_mut(&mut self) -> Vec<ParamSlot<'_>> {
        let mut v = self.fc6.params_mut();
        v.extend(self.fc7.params_mut());
        v.extend(self.fc8.params_mut());
        v
    }
}

/// Feature generator: FC1 -> BN -> ReLU -> FC2 -> BN -> ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub fc1: DenseLayer,
    pub bn1: BatchNormLayer,
    pub fc2: DenseLayer,
    pub bn2: BatchNormLayer,
}

/// Batch-statistics mode or running-statistics mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenMode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
pub struct GenTape {
    noise: Matrix,
    h1: Matrix,
    bn1: BatchNormCache,
    a1: Matrix,
    h2: Matrix,
    bn2: BatchNormCache,
    output: Matrix,
}

impl GenTape {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    pub fn noise(&self) -> &Matrix {
        &self.noise
    }
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        Generator {
            fc1: DenseLayer::he_init("fc1", cfg.noise_dim, cfg.gen_hidden_dim, rng),
            bn1: BatchNormLayer::new("bn1", cfg.gen_hidden_dim),
            fc2: DenseLayer::he_init("fc2", cfg.gen_hidden_dim, cfg.feature_dim, rng),
            bn2: BatchNormLayer::new("bn2", cfg.feature_dim),
        }
    }

    pub fn from_layers(
        fc1: DenseLayer,
        bn1: BatchNormLayer,
        fc2: DenseLayer,
        bn2: BatchNormLayer,
    ) -> Result<Self> {
        if fc1.out_dim() != bn1.dim() || bn1.dim() != fc2.in_dim() || fc2.out_dim() != bn2.dim() {
            return Err(Error::Shape("generator layers do not chain".into()));
        }
        Ok(Generator { fc1, bn1, fc2, bn2 })
    }

    pub fn noise_dim(&self) -> usize {
        self.fc1.in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.fc2.out_dim()
    }

    /// Train-mode pass over a noise batch (at least two rows).
    pub fn forward_train(&self, noise: &Matrix) -> Result<GenTape> {
        if noise.rows() < 2 {
            return Err(Error::InvalidBatch(format!(
                "generator needs a batch of at least 2 in train mode, got {}",
                noise.rows()
            )));
        }
        let h1 = self.fc1.forward(noise)?;
        let (mut a1, bn1) = self.bn1.forward_train(&h1)?;
        relu_in_place(&mut a1);
        let h2 = self.fc2.forward(&a1)?;
        let (mut output, bn2) = self.bn2.forward_train(&h2)?;
        relu_in_place(&mut output);
        Ok(GenTape {
            noise: noise.clone(),
            h1,
            bn1,
            a1,
            h2,
            bn2,
            output,
        })
    }

    pub fn forward(&self, noise: &Matrix, mode: GenMode) -> Result<Matrix> {
        match mode {
            GenMode::Train => Ok(self.forward_train(noise)?.output),
            GenMode::Infer => {
                let h1 = self.fc1.forward(noise)?;
                let mut a1 = self.bn1.forward_infer(&h1)?;
                relu_in_place(&mut a1);
                let h2 = self.fc2.forward(&a1)?;
                let mut out = self.bn2.forward_infer(&h2)?;
                relu_in_place(&mut out);
                Ok(out)
            }
        }
    }

    /// Accumulates parameter gradients from the gradient at the output.
    pub fn backward(&mut self, tape: &GenTape, d_output: &Matrix) -> Result<()> {
        if d_output.rows() != tape.output.rows() || d_output.cols() != tape.output.cols() {
            return Err(Error::Shape("generator output gradient shape mismatch".into()));
        }
        if tape.h1.cols() != self.fc1.out_dim() || tape.h2.cols() != self.fc2.out_dim() {
            return Err(Error::State("tape was recorded on a different network".into()));
        }
        let mut d = d_output.clone();
        relu_backward_in_place(&tape.output, &mut d);
        let d_h2 = self.bn2.backward(&tape.bn2, &d, true)?;
        let mut d_a1 = self.fc2.backward(&tape.a1, &d_h2, true)?;
        relu_backward_in_place(&tape.a1, &mut d_a1);
        let d_h1 = self.bn1.backward(&tape.bn1, &d_a1, true)?;
        self.fc1.backward(&tape.noise, &d_h1, true)?;
        Ok(())
    }

    pub fn update_running_stats(&mut self, tape: &GenTape) {
        self.bn1.update_running_stats(&tape.bn1);
        self.bn2.update_running_stats(&tape.bn2);
    }
}

impl Parameterized for Generator {
    fn params_mut(&mut self) -> Vec<ParamSlot<'_>> {
        let mut v = self.fc1.params_mut();
        v.extend(self.bn1.params_mut());
        v.extend(self.fc2.params_mut());
        v.extend(self.bn2.params_mut());
        v
    }
}

/// Generator and discriminator trained together.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModels {
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl Parameterized for GanModels {
    fn params_mut(&mut self) -> Vec<ParamSlot<'_>> {
        let mut v: Vec<ParamSlot<'_>> = self
            .generator
            .params_mut()
            .into_iter()
            .map(|mut s| {
                s.name = format!("G.{}", s.name);
                s
            })
            .collect();
        v.extend(self.discriminator.params_mut().into_iter().map(|mut s| {
            s.name = format!("D.{}", s.name);
            s
        }));
        v
    }
}

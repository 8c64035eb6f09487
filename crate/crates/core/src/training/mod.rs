//! Window-classifier training: start-focused batch sampling, the
//! classification / temporal-consistency / feature-matching /
//! discriminator objectives, pretraining and alternating GAN updates.

mod check;
mod losses;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use check::{check_all_losses, LossCheck, LOSS_NAMES};
pub use losses::{
    classification_loss, discriminator_loss, matching_loss, similarity_loss, DiscriminatorLoss,
};

use crate::dataset::TrainingSet;
use crate::error::{Error, Result};
use crate::nn::{Discriminator, Generator, Head, InputNorm, Matrix, Parameterized, Sgd};
use crate::types::{ModelConfig, StartPair, WindowSample};

/// How the non-GAN part of each batch is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Half start windows, half everything else.
    #[default]
    Adaptive,
    /// Uniform over all windows.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub lr_pretrain: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub pretrain_iters: usize,
    pub gan_iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampling: Sampling,
}

fn default_lambda() -> f64 {
    1.0
}

fn default_momentum() -> f64 {
    0.9
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            lambda: default_lambda(),
            lr_pretrain: 0.01,
            lr_generator: 0.01,
            lr_discriminator: 0.01,
            momentum: default_momentum(),
            pretrain_iters: 1500,
            gan_iters: 500,
            seed: 0,
            sampling: Sampling::Adaptive,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 4 || self.batch_size % 2 != 0 {
            return Err(Error::Config(format!(
                "batch_size must be even and >= 4, got {}",
                self.batch_size
            )));
        }
        for (name, lr) in [
            ("lr_pretrain", self.lr_pretrain),
            ("lr_generator", self.lr_generator),
            ("lr_discriminator", self.lr_discriminator),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {lr}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Which of the three training refinements are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Methods {
    pub adaptive: bool,
    pub temporal_consistency: bool,
    pub gan: bool,
}

impl Methods {
    pub const NONE: Methods = Methods {
        adaptive: false,
        temporal_consistency: false,
        gan: false,
    };
    pub const ALL: Methods = Methods {
        adaptive: true,
        temporal_consistency: true,
        gan: true,
    };

    /// Disabled methods fall back to uniform sampling, `lambda = 0` and no
    /// GAN phase respectively.
    pub fn apply(&self, cfg: &TrainConfig) -> TrainConfig {
        let mut out = cfg.clone();
        if !self.adaptive {
            out.sampling = Sampling::Uniform;
        }
        if !self.temporal_consistency {
            out.lambda = 0.0;
        }
        if !self.gan {
            out.gan_iters = 0;
        }
        out
    }

    /// The no-method baseline, each single method, and all three.
    pub fn ablation_grid() -> [Methods; 5] {
        let one = |a, t, g| Methods {
            adaptive: a,
            temporal_consistency: t,
            gan: g,
        };
        [
            Methods::NONE,
            one(true, false, false),
            one(false, true, false),
            one(false, false, true),
            Methods::ALL,
        ]
    }
}

impl fmt::Display for Methods {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.adaptive, "adaptive"),
            (self.temporal_consistency, "tc"),
            (self.gan, "gan"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

impl FromStr for Methods {
    type Err = Error;

    /// Comma-separated subset of `adaptive`, `tc`, `gan`; empty or `none`
    /// disables everything.
    fn from_str(s: &str) -> Result<Self> {
        let mut m = Methods::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "adaptive" => m.adaptive = true,
                "tc" => m.temporal_consistency = true,
                "gan" => m.gan = true,
                "none" => {}
                "all" => m = Methods::ALL,
                other => {
                    return Err(Error::Config(format!(
                        "unknown method {other:?} (expected adaptive, tc, gan)"
                    )))
                }
            }
        }
        Ok(m)
    }
}

/// `n/2` draws with replacement from `starts` and `n/2` from `others`, in
/// shuffled order.
pub fn adaptive_sample_batch<'a, R: Rng + ?Sized>(
    rng: &mut R,
    starts: &[&'a WindowSample],
    others: &[&'a WindowSample],
    n: usize,
) -> Result<Vec<&'a WindowSample>> {
    if n % 2 != 0 {
        return Err(Error::Config(format!("batch size {n} is odd")));
    }
    if starts.is_empty() || others.is_empty() {
        return Err(Error::Data(format!(
            "adaptive sampling needs both pools non-empty ({} starts, {} others)",
            starts.len(),
            others.len()
        )));
    }
    let mut batch = Vec::with_capacity(n);
    for _ in 0..n / 2 {
        batch.push(starts[rng.random_range(0..starts.len())]);
    }
    for _ in 0..n / 2 {
        batch.push(others[rng.random_range(0..others.len())]);
    }
    batch.shuffle(rng);
    Ok(batch)
}

/// `n` draws with replacement from `pool`.
pub fn uniform_sample_batch<'a, R: Rng + ?Sized>(
    rng: &mut R,
    pool: &[&'a WindowSample],
    n: usize,
) -> Result<Vec<&'a WindowSample>> {
    if pool.is_empty() {
        return Err(Error::Data("cannot sample from an empty pool".into()));
    }
    Ok((0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect())
}

fn sample_pairs<'a, R: Rng + ?Sized>(rng: &mut R, pairs: &'a [StartPair], n: usize) -> Vec<&'a StartPair> {
    if pairs.is_empty() {
        return Vec::new();
    }
    (0..n).map(|_| &pairs[rng.random_range(0..pairs.len())]).collect()
}

/// Standard-normal noise batch.
pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R, rows: usize, dim: usize) -> Matrix {
    let data = (0..rows * dim).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, dim, data).expect("sizes agree")
}

/// One row of the training log. Terms that were not evaluated are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossRecord {
    pub iter: usize,
    pub cls: Option<f64>,
    pub sim: Option<f64>,
    pub matching: Option<f64>,
    pub real: Option<f64>,
    pub fake: Option<f64>,
}

pub const LOSS_LOG_HEADER: &str = "iter,loss_cls,loss_sim,loss_match,loss_real,loss_fake";

pub fn write_loss_log<W: Write>(mut w: W, records: &[LossRecord]) -> Result<()> {
    writeln!(w, "{LOSS_LOG_HEADER}")?;
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.8}")).unwrap_or_default();
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.iter,
            cell(r.cls),
            cell(r.sim),
            cell(r.matching),
            cell(r.real),
            cell(r.fake)
        )?;
    }
    Ok(())
}

// Independent random streams so that toggling one term never shifts the
// draws of another.
const STREAM_PRETRAIN_BATCH: u64 = 1;
const STREAM_PRETRAIN_PAIRS: u64 = 2;
const STREAM_GAN_BATCH: u64 = 3;
const STREAM_GAN_PAIRS: u64 = 4;
const STREAM_GAN_NOISE: u64 = 5;
const STREAM_GAN_STARTS: u64 = 6;

/// Random stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fresh He-initialized networks drawn from stream 0 of `seed`, with the
/// discriminator's input standardization fitted on every training window.
pub fn init_networks(cfg: &ModelConfig, set: &TrainingSet, seed: u64) -> Result<(Discriminator, Generator)> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, 0);
    let norm = InputNorm::fit(cfg.feature_dim, set.samples.iter().map(|s| s.features()))?;
    let d = Discriminator::new(cfg, &mut rng).with_input_norm(norm)?;
    let g = Generator::new(cfg, &mut rng);
    Ok((d, g))
}

struct Pools<'a> {
    all: Vec<&'a WindowSample>,
    starts: Vec<&'a WindowSample>,
    others: Vec<&'a WindowSample>,
}

impl<'a> Pools<'a> {
    fn new(set: &'a TrainingSet) -> Self {
        Pools {
            all: set.samples.iter().collect(),
            starts: set.starts(),
            others: set.non_starts(),
        }
    }

    fn batch<R: Rng + ?Sized>(&self, rng: &mut R, sampling: Sampling, n: usize) -> Result<Vec<&'a WindowSample>> {
        match sampling {
            Sampling::Adaptive => adaptive_sample_batch(rng, &self.starts, &self.others, n),
            Sampling::Uniform => uniform_sample_batch(rng, &self.all, n),
        }
    }
}

fn finite(v: f64, phase: &str, it: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence {
            location: format!("{phase} iteration {it}: loss is {v}"),
        })
    }
}

fn at_iteration<T>(r: Result<T>, phase: &str, it: usize) -> Result<T> {
    r.map_err(|e| match e {
        Error::Divergence { location } => Error::Divergence {
            location: format!("{phase} iteration {it}: {location}"),
        },
        other => other,
    })
}

/// Minimizes classification + `lambda` * similarity for `pretrain_iters`
/// steps. Returns one log record per step.
pub fn pretrain(d: &mut Discriminator, set: &TrainingSet, cfg: &TrainConfig) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    let pools = Pools::new(set);
    let mut batch_rng = stream_rng(cfg.seed, STREAM_PRETRAIN_BATCH);
    let mut pair_rng = stream_rng(cfg.seed, STREAM_PRETRAIN_PAIRS);
    let sgd = Sgd::new(cfg.lr_pretrain, cfg.momentum);
    let use_sim = cfg.lambda > 0.0 && !set.pairs.is_empty();
    let mut log = Vec::with_capacity(cfg.pretrain_iters);
    for it in 0..cfg.pretrain_iters {
        let batch = pools.batch(&mut batch_rng, cfg.sampling, cfg.batch_size)?;
        d.zero_grad();
        let cls = finite(losses::accumulate_classification(d, &batch, 1.0)?, "pretrain", it)?;
        let sim = if use_sim {
            let pairs = sample_pairs(&mut pair_rng, &set.pairs, cfg.batch_size / 2);
            Some(finite(losses::accumulate_similarity(d, &pairs, cfg.lambda)?, "pretrain", it)?)
        } else {
            None
        };
        at_iteration(sgd.step(d), "pretrain", it)?;
        log.push(LossRecord {
            iter: it,
            cls: Some(cls),
            sim,
            ..LossRecord::default()
        });
    }
    Ok(log)
}

/// Alternates one generator step (feature matching against start windows,
/// D fixed) and one discriminator step (`K + 2`-way loss plus `lambda` *
/// similarity, G fixed) for `gan_iters` iterations. Log iterations continue
/// after the pretraining ones.
pub fn train_gan(
    g: &mut Generator,
    d: &mut Discriminator,
    set: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    if cfg.gan_iters == 0 {
        return Ok(Vec::new());
    }
    let pools = Pools::new(set);
    if pools.starts.is_empty() {
        return Err(Error::Data("GAN training needs start windows".into()));
    }
    let mut batch_rng = stream_rng(cfg.seed, STREAM_GAN_BATCH);
    let mut pair_rng = stream_rng(cfg.seed, STREAM_GAN_PAIRS);
    let mut noise_rng = stream_rng(cfg.seed, STREAM_GAN_NOISE);
    let mut start_rng = stream_rng(cfg.seed, STREAM_GAN_STARTS);
    let sgd_g = Sgd::new(cfg.lr_generator, cfg.momentum);
    let sgd_d = Sgd::new(cfg.lr_discriminator, cfg.momentum);
    let half = cfg.batch_size / 2;
    let use_sim = cfg.lambda > 0.0 && !set.pairs.is_empty();
    let mut log = Vec::with_capacity(cfg.gan_iters);
    for step in 0..cfg.gan_iters {
        let it = cfg.pretrain_iters + step;

        let starts = uniform_sample_batch(&mut start_rng, &pools.starts, half)?;
        let noise = sample_noise(&mut noise_rng, half, g.noise_dim());
        let outcome = losses::matching_step(g, d, &starts, &noise)?;
        let matching = finite(outcome.loss, "gan", it)?;
        at_iteration(sgd_g.step(g), "gan", it)?;
        g.update_running_stats(&outcome.tape);

        let batch = pools.batch(&mut batch_rng, cfg.sampling, cfg.batch_size)?;
        let pairs = if use_sim {
            sample_pairs(&mut pair_rng, &set.pairs, half)
        } else {
            Vec::new()
        };
        let noise = sample_noise(&mut noise_rng, half, g.noise_dim());
        let dl = discriminator_loss(g, d, &batch, &pairs, &noise, cfg.lambda)?;
        finite(dl.total, "gan", it)?;
        at_iteration(sgd_d.step(d), "gan", it)?;

        log.push(LossRecord {
            iter: it,
            cls: None,
            sim: dl.similarity,
            matching: Some(matching),
            real: Some(dl.real),
            fake: Some(dl.fake),
        });
    }
    Ok(log)
}

/// Fraction of `samples` whose argmax over the `K + 1` inference classes
/// equals the label.
pub fn accuracy(d: &Discriminator, samples: &[&WindowSample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in samples.chunks(512) {
        let rows: Vec<&[f64]> = chunk.iter().map(|s| s.features()).collect();
        let tape = d.forward(&Matrix::from_rows(&rows)?, Head::Infer)?;
        for (row, s) in tape.logits().iter_rows().zip(chunk) {
            if argmax(row) as u32 + 1 == s.label() {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;

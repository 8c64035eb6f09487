//! Finite-difference verification of every training objective on small
//! seeded networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::losses::{
    classification_loss, discriminator_loss, matching_loss, similarity_loss,
};
use super::sample_noise;
use crate::error::Result;
use crate::nn::gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
use crate::nn::{Discriminator, Generator, Parameterized};
use crate::types::{ClassId, ModelConfig, StartPair, WindowRole, WindowSample};

pub const LOSS_NAMES: [&str; 5] = [
    "classification",
    "similarity",
    "matching",
    "real+fake",
    "discriminator",
];

/// Result for one objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCheck {
    pub loss: &'static str,
    pub report: GradCheckReport,
    /// The network that must not receive gradient had none.
    pub isolated: bool,
}

impl LossCheck {
    pub fn passed(&self) -> bool {
        self.report.passed() && self.isolated
    }
}

fn randn<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

struct Fixture {
    d: Discriminator,
    g: Generator,
    batch: Vec<WindowSample>,
    pairs: Vec<StartPair>,
    starts: Vec<WindowSample>,
    noise: crate::nn::Matrix,
}

fn fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(2..=4usize);
    let mut cfg = ModelConfig::new(k, rng.random_range(3..=6), rng.random_range(4..=8));
    cfg.noise_dim = rng.random_range(2..=4);
    cfg.gen_hidden_dim = rng.random_range(3..=6);
    let mut d = Discriminator::new(&cfg, &mut rng);
    let mut g = Generator::new(&cfg, &mut rng);
    // Zero biases put every rectifier fed a zero input exactly on its kink.
    jitter_biases(&mut d, &mut rng);
    jitter_biases(&mut g, &mut rng);
    let dim = cfg.feature_dim;
    let n = 2 * rng.random_range(2..=3usize);

    let batch = (0..n)
        .map(|i| {
            let label = rng.random_range(1..=k as ClassId + 1);
            let role = if label as usize > k {
                WindowRole::Background
            } else {
                WindowRole::Start
            };
            WindowSample::new("v", 16 + i, 1.0, randn(&mut rng, dim), label, role).unwrap()
        })
        .collect();
    let pairs = (0..3)
        .map(|i| {
            let label = rng.random_range(1..=k as ClassId);
            let s = WindowSample::new("v", 16 + i, 1.0, randn(&mut rng, dim), label, WindowRole::Start).unwrap();
            let f = WindowSample::new("v", 32 + i, 2.0, randn(&mut rng, dim), label, WindowRole::FollowUp).unwrap();
            StartPair::new(s, f).unwrap()
        })
        .collect();
    let starts = (0..n / 2)
        .map(|i| WindowSample::new("v", 16 + i, 1.0, randn(&mut rng, dim), 1, WindowRole::Start).unwrap())
        .collect();
    let noise = sample_noise(&mut rng, n / 2, cfg.noise_dim);
    Fixture {
        d,
        g,
        batch,
        pairs,
        starts,
        noise,
    }
}

fn jitter_biases<M: Parameterized, R: Rng>(m: &mut M, rng: &mut R) {
    for slot in m.params_mut() {
        if slot.name.ends_with("bias") {
            for v in slot.values.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v = 0.5 * z;
            }
        }
    }
}

fn all_zero<M: Parameterized>(m: &mut M) -> bool {
    m.grad_vector().iter().all(|g| *g == 0.0)
}

/// Runs the central-difference check on each objective for the networks
/// drawn from `seed`. Objectives that must leave one network untouched also
/// verify that its gradient buffers stay exactly zero.
pub fn check_all_losses(seed: u64, gc: &GradCheckConfig) -> Result<Vec<LossCheck>> {
    let mut fx = fixture(seed);
    let batch: Vec<&WindowSample> = fx.batch.iter().collect();
    let pairs: Vec<&StartPair> = fx.pairs.iter().collect();
    let starts: Vec<&WindowSample> = fx.starts.iter().collect();
    let mut out = Vec::with_capacity(LOSS_NAMES.len());

    let mut d = fx.d.clone();
    let report = check_gradients(&mut d, gc, |d| classification_loss(d, &batch))?;
    out.push(LossCheck {
        loss: LOSS_NAMES[0],
        report,
        isolated: true,
    });

    let mut d = fx.d.clone();
    let report = check_gradients(&mut d, gc, |d| similarity_loss(d, &pairs))?;
    out.push(LossCheck {
        loss: LOSS_NAMES[1],
        report,
        isolated: true,
    });

    let mut g = fx.g.clone();
    let mut d = fx.d.clone();
    let report = check_gradients(&mut g, gc, |g| matching_loss(g, &mut d, &starts, &fx.noise))?;
    let isolated = all_zero(&mut d);
    out.push(LossCheck {
        loss: LOSS_NAMES[2],
        report,
        isolated,
    });

    for (name, lambda, pairs) in [(LOSS_NAMES[3], 0.0, &[][..]), (LOSS_NAMES[4], 0.7, &pairs[..])] {
        let mut d = fx.d.clone();
        let g = &mut fx.g;
        let report = check_gradients(&mut d, gc, |d| {
            discriminator_loss(g, d, &batch, pairs, &fx.noise, lambda).map(|l| l.total)
        })?;
        let isolated = all_zero(g);
        out.push(LossCheck {
            loss: name,
            report,
            isolated,
        });
    }
    Ok(out)
}

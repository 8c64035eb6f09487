//! Training objectives. Every public loss zeroes the gradient buffers of
//! the networks it touches and then fills them with its own gradient.

use crate::error::{Error, Result};
use crate::nn::{DiscTape, Discriminator, GenTape, Generator, Head, Matrix, Parameterized};
use crate::types::{ClassId, StartPair, WindowSample};

fn stack(batch: &[&WindowSample]) -> Result<Matrix> {
    let rows: Vec<&[f64]> = batch.iter().map(|s| s.features()).collect();
    Matrix::from_rows(&rows)
}

/// Mean cross-entropy of `labels` over the first `classes` logits, scaled by
/// `weight` and back-propagated into `d`.
fn accumulate_cross_entropy(
    d: &mut Discriminator,
    x: &Matrix,
    labels: &[ClassId],
    classes: usize,
    weight: f64,
) -> Result<f64> {
    let tape = d.forward(x, Head::Train)?;
    let n = labels.len() as f64;
    let logits = tape.logits();
    let mut d_logits = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits.row(r)[..classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|o| (o - max).exp()).sum();
        let target = label as usize - 1;
        loss -= row[target] - max - sum.ln();
        let g = d_logits.row_mut(r);
        for (c, o) in row.iter().enumerate() {
            let p = (o - max).exp() / sum;
            g[c] = weight * (p - if c == target { 1.0 } else { 0.0 }) / n;
        }
    }
    d.backward(&tape, Some(&d_logits), None, true)?;
    Ok(loss / n)
}

fn check_labels(batch: &[&WindowSample], max_label: ClassId, what: &str) -> Result<Vec<ClassId>> {
    batch
        .iter()
        .map(|s| {
            let y = s.label();
            if y == 0 || y > max_label {
                Err(Error::Contract(format!(
                    "{what} takes labels in 1..={max_label}, got {y}"
                )))
            } else {
                Ok(y)
            }
        })
        .collect()
}

pub(crate) fn accumulate_classification(
    d: &mut Discriminator,
    batch: &[&WindowSample],
    weight: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidBatch("empty classification batch".into()));
    }
    let k = d.num_actions() as ClassId;
    let labels = check_labels(batch, k + 1, "classification loss")?;
    accumulate_cross_entropy(d, &stack(batch)?, &labels, k as usize + 1, weight)
}

/// Softmax cross-entropy over the `K + 1` real classes (the hard-negative
/// logit is left out of the normalization).
pub fn classification_loss(d: &mut Discriminator, batch: &[&WindowSample]) -> Result<f64> {
    d.zero_grad();
    accumulate_classification(d, batch, 1.0)
}

pub(crate) fn accumulate_similarity(
    d: &mut Discriminator,
    pairs: &[&StartPair],
    weight: f64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidBatch("similarity loss needs at least one pair".into()));
    }
    let starts: Vec<&WindowSample> = pairs.iter().map(|p| p.start()).collect();
    let follows: Vec<&WindowSample> = pairs.iter().map(|p| p.follow_up()).collect();
    let tape_s = d.forward(&stack(&starts)?, Head::Train)?;
    let tape_f = d.forward(&stack(&follows)?, Head::Train)?;
    let (es, ef) = (tape_s.embedding(), tape_f.embedding());
    let n = pairs.len() as f64;
    let mut g_s = Matrix::zeros(es.rows(), es.cols());
    let mut g_f = Matrix::zeros(ef.rows(), ef.cols());
    let mut loss = 0.0;
    for r in 0..es.rows() {
        for c in 0..es.cols() {
            let diff = es.get(r, c) - ef.get(r, c);
            loss += diff * diff;
            g_s.row_mut(r)[c] = weight * 2.0 * diff / n;
            g_f.row_mut(r)[c] = -weight * 2.0 * diff / n;
        }
    }
    // both branches share one parameter set; gradients add up
    d.backward(&tape_s, None, Some(&g_s), true)?;
    d.backward(&tape_f, None, Some(&g_f), true)?;
    Ok(loss / n)
}

/// Mean squared L2 distance between FC7 embeddings of start windows and
/// their follow-up windows.
pub fn similarity_loss(d: &mut Discriminator, pairs: &[&StartPair]) -> Result<f64> {
    d.zero_grad();
    accumulate_similarity(d, pairs, 1.0)
}

pub(crate) struct MatchingOutcome {
    pub loss: f64,
    pub tape: GenTape,
}

pub(crate) fn matching_step(
    g: &mut Generator,
    d: &mut Discriminator,
    starts: &[&WindowSample],
    noise: &Matrix,
) -> Result<MatchingOutcome> {
    if starts.len() < 2 || noise.rows() < 2 {
        return Err(Error::InvalidBatch(format!(
            "feature matching needs batches of at least 2 (got {} starts, {} noise)",
            starts.len(),
            noise.rows()
        )));
    }
    if starts.len() != noise.rows() {
        return Err(Error::InvalidBatch(format!(
            "start batch ({}) and noise batch ({}) differ in size",
            starts.len(),
            noise.rows()
        )));
    }
    g.zero_grad();
    d.zero_grad();
    let real_mean = d.embed(&stack(starts)?)?.column_means();
    let gen_tape = g.forward_train(noise)?;
    let fake_tape: DiscTape = d.forward(gen_tape.output(), Head::Train)?;
    let fake_mean = fake_tape.embedding().column_means();
    let diff: Vec<f64> = real_mean.iter().zip(&fake_mean).map(|(r, f)| r - f).collect();
    let loss: f64 = diff.iter().map(|v| v * v).sum();

    let n = noise.rows() as f64;
    let mut d_emb = Matrix::zeros(noise.rows(), diff.len());
    for r in 0..noise.rows() {
        for (c, v) in diff.iter().enumerate() {
            d_emb.row_mut(r)[c] = -2.0 * v / n;
        }
    }
    // D is a fixed feature extractor here: no parameter gradients
    let d_fake = d.backward(&fake_tape, None, Some(&d_emb), false)?;
    g.backward(&gen_tape, &d_fake)?;
    Ok(MatchingOutcome {
        loss,
        tape: gen_tape,
    })
}

/// Squared distance between the batch means of FC7 embeddings of real start
/// windows and of generated features. Gradients reach the generator only.
pub fn matching_loss(
    g: &mut Generator,
    d: &mut Discriminator,
    starts: &[&WindowSample],
    noise: &Matrix,
) -> Result<f64> {
    Ok(matching_step(g, d, starts, noise)?.loss)
}

/// Components of the discriminator objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorLoss {
    pub real: f64,
    pub fake: f64,
    /// Unweighted temporal-consistency term, if pairs were given.
    pub similarity: Option<f64>,
    pub total: f64,
}

/// `L_real + L_fake + lambda * L_similarity`, with gradients for D only.
///
/// Real samples are classified over all `K + 2` classes; generated samples
/// are pushed towards the hard-negative class `K + 2` and are treated as
/// constants.
pub fn discriminator_loss(
    g: &mut Generator,
    d: &mut Discriminator,
    batch: &[&WindowSample],
    pairs: &[&StartPair],
    noise: &Matrix,
    lambda: f64,
) -> Result<DiscriminatorLoss> {
    if batch.is_empty() {
        return Err(Error::InvalidBatch("empty real batch".into()));
    }
    g.zero_grad();
    d.zero_grad();
    let k = d.num_actions() as ClassId;
    let labels = check_labels(batch, k + 1, "real-sample loss")?;
    let all = k as usize + 2;
    let real = accumulate_cross_entropy(d, &stack(batch)?, &labels, all, 1.0)?;

    let fakes = g.forward(noise, crate::nn::GenMode::Train)?;
    let fake_labels = vec![k + 2; fakes.rows()];
    let fake = accumulate_cross_entropy(d, &fakes, &fake_labels, all, 1.0)?;

    let similarity = if pairs.is_empty() {
        None
    } else {
        Some(accumulate_similarity(d, pairs, lambda)?)
    };
    let total = real + fake + lambda * similarity.unwrap_or(0.0);
    Ok(DiscriminatorLoss {
        real,
        fake,
        similarity,
        total,
    })
}

//! Streaming action-start detection.
//!
//! Each incoming window is classified over `K + 1` classes; a start is
//! emitted when the top class is an action, differs from the previous
//! window's top class, and its probability exceeds the threshold.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::dataset::{Corpus, FeatureStream, VideoAnnotation};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::nn::{softmax, Discriminator, Head, Matrix};
use crate::training::argmax;
use crate::types::{ASGroundTruth, ASPrediction, ClassId, EvalConfig};

/// `{0.05, 0.10, ..., 0.95}`.
pub fn default_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

/// Per-stream detector state. Depends only on windows already seen.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    video_id: String,
    num_actions: usize,
    threshold: f64,
    previous: Option<ClassId>,
    last_time: Option<f64>,
}

impl DetectorState {
    pub fn new(video_id: impl Into<String>, num_actions: usize, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Config(format!("threshold {threshold} outside [0, 1]")));
        }
        if num_actions == 0 {
            return Err(Error::Config("detector needs at least one action class".into()));
        }
        Ok(DetectorState {
            video_id: video_id.into(),
            num_actions,
            threshold,
            previous: None,
            last_time: None,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Top class of the last window, if any.
    pub fn previous(&self) -> Option<ClassId> {
        self.previous
    }

    /// Consumes the `K + 1` class probabilities of the window ending at `t`.
    pub fn step_scores(&mut self, t: f64, probs: &[f64]) -> Result<Option<ASPrediction>> {
        if probs.len() != self.num_actions + 1 {
            return Err(Error::Shape(format!(
                "expected {} class scores, got {}",
                self.num_actions + 1,
                probs.len()
            )));
        }
        if !t.is_finite() || self.last_time.is_some_and(|last| t <= last) {
            return Err(Error::Stream(format!(
                "{}: window time {t} does not follow {:?}",
                self.video_id, self.last_time
            )));
        }
        let best = argmax(probs);
        let class = best as ClassId + 1;
        let score = probs[best];
        let emit = best < self.num_actions && self.previous != Some(class) && score > self.threshold;
        self.previous = Some(class);
        self.last_time = Some(t);
        if emit {
            Ok(Some(ASPrediction::new(self.video_id.clone(), t, class, score)?))
        } else {
            Ok(None)
        }
    }

    /// Classifies `features` with `model` and feeds the result to
    /// [`step_scores`](Self::step_scores).
    pub fn step(&mut self, model: &Discriminator, t: f64, features: &[f64]) -> Result<Option<ASPrediction>> {
        let (_, logits) = crate::nn::disc_forward(model, features, Head::Infer)?;
        self.step_scores(t, &softmax(&logits))
    }
}

/// Class probabilities of every window of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredStream {
    pub video_id: String,
    pub times: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
}

/// End frames of the windows visited at `stride`: `L - 1, L - 1 + stride, ...`.
pub fn window_ends(num_frames: usize, window_len: usize, stride: usize) -> Result<Vec<usize>> {
    if window_len == 0 || stride == 0 {
        return Err(Error::Config("window length and stride must be at least 1".into()));
    }
    Ok((window_len - 1..num_frames).step_by(stride).collect())
}

/// Scores the windows of `fs` that end at `window_ends(...)`.
pub fn score_video(
    model: &Discriminator,
    ann: &VideoAnnotation,
    fs: &FeatureStream,
    window_len: usize,
    stride: usize,
) -> Result<ScoredStream> {
    if fs.dim != model.feature_dim() {
        return Err(Error::Shape(format!(
            "video {}: features have {} dimensions, model expects {}",
            ann.id,
            fs.dim,
            model.feature_dim()
        )));
    }
    let frames = ann.num_frames.min(fs.len());
    let ends = window_ends(frames, window_len, stride)?;
    let mut probs = Vec::with_capacity(ends.len());
    for chunk in ends.chunks(1024) {
        let rows: Vec<&[f64]> = chunk.iter().map(|&e| fs.frames[e].as_slice()).collect();
        let tape = model.forward(&Matrix::from_rows(&rows)?, Head::Infer)?;
        probs.extend(tape.logits().iter_rows().map(softmax));
    }
    Ok(ScoredStream {
        video_id: ann.id.clone(),
        times: ends.iter().map(|&e| e as f64 / ann.fps).collect(),
        probs,
    })
}

pub fn score_corpus(model: &Discriminator, corpus: &Corpus, window_len: usize, stride: usize) -> Result<Vec<ScoredStream>> {
    corpus
        .iter()
        .map(|(ann, fs)| score_video(model, ann, fs, window_len, stride))
        .collect()
}

/// Runs a fresh detector over each stream.
pub fn detect_scored(streams: &[ScoredStream], num_actions: usize, threshold: f64) -> Result<Vec<ASPrediction>> {
    let mut out = Vec::new();
    for s in streams {
        let mut state = DetectorState::new(s.video_id.clone(), num_actions, threshold)?;
        for (t, p) in s.times.iter().zip(&s.probs) {
            out.extend(state.step_scores(*t, p)?);
        }
    }
    Ok(out)
}

/// Average mAP of every grid value.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSearch {
    pub threshold: f64,
    pub average_map: f64,
    /// `(theta, average mAP)` in grid order.
    pub table: Vec<(f64, f64)>,
}

/// Picks the grid value with the best average mAP on `streams`; ties go to
/// the larger threshold.
pub fn grid_search_scored(
    streams: &[ScoredStream],
    gts: &[ASGroundTruth],
    grid: &[f64],
    eval: &EvalConfig,
) -> Result<ThresholdSearch> {
    if grid.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &theta in grid {
        let preds = detect_scored(streams, eval.num_classes, theta)?;
        let score = evaluate(&preds, gts, eval)?.average_map;
        table.push((theta, score));
        let better = match best {
            None => true,
            Some((bt, bs)) => score > bs || (score == bs && theta > bt),
        };
        if better {
            best = Some((theta, score));
        }
    }
    let (threshold, average_map) = best.expect("grid is non-empty");
    Ok(ThresholdSearch {
        threshold,
        average_map,
        table,
    })
}

/// Threshold search with `model` over the windows of `corpus`.
pub fn grid_search_threshold(
    model: &Discriminator,
    corpus: &Corpus,
    grid: &[f64],
    eval: &EvalConfig,
    window_len: usize,
    stride: usize,
) -> Result<ThresholdSearch> {
    let streams = score_corpus(model, corpus, window_len, stride)?;
    grid_search_scored(&streams, &corpus.ground_truths(), grid, eval)
}

/// `K + 1` scores drawn uniformly from the probability simplex.
pub fn random_scores<R: Rng + ?Sized>(rng: &mut R, num_actions: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..=num_actions).map(|_| Exp1.sample(rng)).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|x| x / sum).collect()
}

/// Top class and score of one random-guess draw.
pub fn random_guess<R: Rng + ?Sized>(rng: &mut R, num_actions: usize) -> (ClassId, f64) {
    let p = random_scores(rng, num_actions);
    let best = argmax(&p);
    (best as ClassId + 1, p[best])
}

/// Random-guess scores at the window times of `corpus`.
pub fn random_scored_corpus<R: Rng + ?Sized>(
    rng: &mut R,
    corpus: &Corpus,
    num_actions: usize,
    window_len: usize,
    stride: usize,
) -> Result<Vec<ScoredStream>> {
    corpus
        .videos
        .iter()
        .map(|ann| {
            let ends = window_ends(ann.num_frames, window_len, stride)?;
            Ok(ScoredStream {
                video_id: ann.id.clone(),
                times: ends.iter().map(|&e| e as f64 / ann.fps).collect(),
                probs: ends.iter().map(|_| random_scores(rng, num_actions)).collect(),
            })
        })
        .collect()
}

pub const PREDICTIONS_HEADER: &str = "video_id,time_sec,class_id,score";

/// Writes predictions sorted by `(video_id, time)` with six decimals.
pub fn write_predictions<W: Write>(mut w: W, preds: &[ASPrediction]) -> Result<()> {
    let mut sorted: Vec<&ASPrediction> = preds.iter().collect();
    sorted.sort_by(|a, b| {
        a.video_id
            .cmp(&b.video_id)
            .then(a.time.total_cmp(&b.time))
            .then(a.action_class.cmp(&b.action_class))
    });
    writeln!(w, "{PREDICTIONS_HEADER}")?;
    for p in sorted {
        if p.video_id.contains([',', '\n', '\r']) {
            return Err(Error::Format(format!("video id {:?} cannot be written to CSV", p.video_id)));
        }
        writeln!(w, "{},{:.6},{},{:.6}", p.video_id, p.time, p.action_class, p.score)?;
    }
    Ok(())
}

/// Parses a predictions CSV. Errors name the 1-based line.
pub fn read_predictions<R: BufRead>(r: R) -> Result<Vec<ASPrediction>> {
    let mut out = Vec::new();
    let mut seen_header = false;
    for (i, line) in r.lines().enumerate() {
        let n = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if n == 1 {
            if line.trim() != PREDICTIONS_HEADER {
                return Err(Error::Format(format!("line 1: expected header {PREDICTIONS_HEADER:?}")));
            }
            seen_header = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!("line {n}: expected 4 fields, found {}", fields.len())));
        }
        let bad = |what: &str| Error::Format(format!("line {n}: invalid {what}"));
        let time: f64 = fields[1].trim().parse().map_err(|_| bad("time_sec"))?;
        let class: ClassId = fields[2].trim().parse().map_err(|_| bad("class_id"))?;
        let score: f64 = fields[3].trim().parse().map_err(|_| bad("score"))?;
        let pred = ASPrediction::new(fields[0], time, class, score)
            .map_err(|e| Error::Format(format!("line {n}: {e}")))?;
        out.push(pred);
    }
    if !seen_header {
        return Err(Error::Format("line 1: missing header".into()));
    }
    Ok(out)
}

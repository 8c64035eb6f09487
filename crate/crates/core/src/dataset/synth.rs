//! Seeded synthetic corpora.
//!
//! Every frame carries the mean vector of its content (background or one
//! action class) plus isotropic Gaussian noise; a window feature is the mean
//! of its frames. A window whose frames are a fraction `alpha` action and
//! `1 - alpha` background therefore has expected feature
//! `alpha * action_mean + (1 - alpha) * background_mean`.
//!
//! Means sit around a positive baseline and window features are rectified,
//! so streams are non-negative like post-ReLU CNN activations. Away from
//! zero the rectification is inactive and the mixture identity holds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ActionInstance, Corpus, FeatureStream, VideoAnnotation};
use crate::error::{Error, Result};

fn default_fps() -> f64 {
    8.0
}
fn default_window_len() -> usize {
    16
}
fn default_video_sec() -> [f64; 2] {
    [40.0, 60.0]
}
fn default_action_sec() -> [f64; 2] {
    [4.0, 10.0]
}
fn default_gap_sec() -> [f64; 2] {
    [4.0, 10.0]
}
fn default_separation() -> f64 {
    4.0
}
fn default_noise_std() -> f64 {
    1.0
}
fn default_baseline() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub num_videos: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    /// Frames per window; window features average this many frames.
    #[serde(default = "default_window_len")]
    pub window_len: usize,
    /// Video length range in seconds.
    #[serde(default = "default_video_sec")]
    pub video_sec: [f64; 2],
    /// Action instance length range in seconds.
    #[serde(default = "default_action_sec")]
    pub action_sec: [f64; 2],
    /// Background gap range in seconds (also before the first instance).
    #[serde(default = "default_gap_sec")]
    pub gap_sec: [f64; 2],
    /// Distance between the background mean and each class mean.
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Per-dimension noise standard deviation of a full window feature.
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    /// Mean level of every background-mean coordinate.
    #[serde(default = "default_baseline")]
    pub baseline: f64,
    /// Fraction of instances flagged as having an ambiguous start.
    #[serde(default)]
    pub ambiguous_fraction: f64,
}

impl SynthConfig {
    pub fn new(seed: u64, num_classes: usize, feature_dim: usize, num_videos: usize) -> Self {
        SynthConfig {
            seed,
            num_classes,
            feature_dim,
            num_videos,
            fps: default_fps(),
            window_len: default_window_len(),
            video_sec: default_video_sec(),
            action_sec: default_action_sec(),
            gap_sec: default_gap_sec(),
            separation: default_separation(),
            noise_std: default_noise_std(),
            baseline: default_baseline(),
            ambiguous_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return fail(format!("synthetic corpora need at least 2 classes, got {}", self.num_classes));
        }
        if self.feature_dim < 2 {
            return fail(format!("feature_dim must be at least 2, got {}", self.feature_dim));
        }
        if self.num_videos == 0 {
            return fail("num_videos must be at least 1".into());
        }
        if self.window_len == 0 {
            return fail("window_len must be at least 1".into());
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return fail(format!("fps must be positive, got {}", self.fps));
        }
        for (name, [lo, hi]) in [
            ("video_sec", self.video_sec),
            ("action_sec", self.action_sec),
            ("gap_sec", self.gap_sec),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return fail(format!("{name} must be a positive range, got [{lo}, {hi}]"));
            }
        }
        if self.action_sec[0] * self.fps < 1.0 {
            return fail("actions shorter than one frame".into());
        }
        if self.video_sec[0] < self.gap_sec[1] + self.action_sec[1] {
            return fail("videos too short to hold one gap and one action".into());
        }
        if !(self.separation.is_finite() && self.separation > 0.0) {
            return fail("separation must be positive".into());
        }
        if !self.baseline.is_finite() {
            return fail("baseline must be finite".into());
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return fail("noise_std must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.ambiguous_fraction) {
            return fail("ambiguous_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// A generated corpus together with the cluster centres it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub background_mean: Vec<f64>,
    /// `class_means[k - 1]` is the centre of action class `k`.
    pub class_means: Vec<Vec<f64>>,
}

impl SyntheticCorpus {
    /// Expected window feature for an action fraction `alpha` of class `class`.
    pub fn mixture_mean(&self, class: usize, alpha: f64) -> Vec<f64> {
        self.class_means[class - 1]
            .iter()
            .zip(&self.background_mean)
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
            .collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Generates a corpus; identical configs give bit-identical corpora.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.feature_dim;

    let background_mean: Vec<f64> = (0..dim)
        .map(|_| cfg.baseline + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let class_means: Vec<Vec<f64>> = (0..cfg.num_classes)
        .map(|_| {
            let dir: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            background_mean
                .iter()
                .zip(&dir)
                .map(|(b, d)| b + cfg.separation * d / norm)
                .collect()
        })
        .collect();

    let len = cfg.window_len;
    // frame noise scaled so an L-frame average has std noise_std
    let frame_noise = Normal::new(0.0, cfg.noise_std * (len as f64).sqrt())
        .map_err(|e| Error::Config(e.to_string()))?;

    let mut videos = Vec::with_capacity(cfg.num_videos);
    let mut streams = Vec::with_capacity(cfg.num_videos);
    for v in 0..cfg.num_videos {
        let id = format!("video_{v:04}");
        let num_frames = (uniform(&mut rng, cfg.video_sec) * cfg.fps).round() as usize;

        let mut instances = Vec::new();
        let mut frame_class: Vec<usize> = vec![0; num_frames];
        let mut cursor = 0usize;
        loop {
            let gap = (uniform(&mut rng, cfg.gap_sec) * cfg.fps).round().max(1.0) as usize;
            let dur = (uniform(&mut rng, cfg.action_sec) * cfg.fps).round().max(1.0) as usize;
            let class = rng.random_range(1..=cfg.num_classes);
            let ambiguous = cfg.ambiguous_fraction > 0.0 && rng.random_bool(cfg.ambiguous_fraction);
            let start = cursor + gap;
            let end = start + dur;
            if end > num_frames {
                break;
            }
            frame_class[start..end].fill(class);
            instances.push(ActionInstance {
                class: class as u32,
                start_sec: start as f64 / cfg.fps,
                end_sec: end as f64 / cfg.fps,
                ambiguous_start: ambiguous,
            });
            cursor = end;
        }

        let frame_features: Vec<Vec<f64>> = frame_class
            .iter()
            .map(|&c| {
                let centre = if c == 0 { &background_mean } else { &class_means[c - 1] };
                centre.iter().map(|m| m + frame_noise.sample(&mut rng)).collect()
            })
            .collect();

        let frames: Vec<Vec<f64>> = (0..num_frames)
            .map(|end| {
                let first = (end + 1).saturating_sub(len);
                let n = (end + 1 - first) as f64;
                let mut acc = vec![0.0; dim];
                for f in &frame_features[first..=end] {
                    for (a, x) in acc.iter_mut().zip(f) {
                        *a += x;
                    }
                }
                // stored as f32 on disk; quantize now so files reload exactly
                acc.iter().map(|a| (a / n).max(0.0) as f32 as f64).collect()
            })
            .collect();

        videos.push(VideoAnnotation {
            id: id.clone(),
            fps: cfg.fps,
            num_frames,
            instances,
        });
        streams.push(FeatureStream::new(id, dim, frames)?);
    }

    Ok(SyntheticCorpus {
        corpus: Corpus { videos, streams },
        background_mean,
        class_means,
    })
}

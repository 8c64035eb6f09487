//! Sliding-window training data: annotations, feature streams, window roles
//! and start/follow-up pairs.

mod io;
mod synth;

pub use io::{
    read_annotations, read_corpus_dir, read_feature_stream, write_annotations, write_corpus_dir,
    write_feature_stream, AnnotationFile, FEATURE_MAGIC,
};
pub use synth::{synth_corpus, SynthConfig, SyntheticCorpus};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ASGroundTruth, ClassId, ModelConfig, StartPair, WindowRole, WindowSample};

/// One annotated action instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionInstance {
    pub class: ClassId,
    pub start_sec: f64,
    pub end_sec: f64,
    #[serde(default)]
    pub ambiguous_start: bool,
}

// Times that were derived from integer frames may not multiply back exactly.
const FRAME_SLACK: f64 = 1e-9;

impl ActionInstance {
    /// Frames `f` with `start_sec <= f / fps < end_sec`, clipped to the video.
    pub fn frame_range(&self, fps: f64, num_frames: usize) -> std::ops::Range<usize> {
        let first = (self.start_sec * fps - FRAME_SLACK).ceil().max(0.0) as usize;
        let end = ((self.end_sec * fps - FRAME_SLACK).ceil().max(0.0) as usize).min(num_frames);
        first.min(end)..end
    }
}

/// Annotation of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotation {
    pub id: String,
    pub fps: f64,
    pub num_frames: usize,
    pub instances: Vec<ActionInstance>,
}

impl VideoAnnotation {
    pub fn duration(&self) -> f64 {
        self.num_frames as f64 / self.fps
    }

    pub fn validate(&self, num_actions: usize) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Format(format!("video {}: fps must be positive", self.id)));
        }
        if self.num_frames == 0 {
            return Err(Error::Format(format!("video {}: no frames", self.id)));
        }
        let duration = self.duration();
        for (i, inst) in self.instances.iter().enumerate() {
            if !(inst.start_sec >= 0.0 && inst.start_sec < inst.end_sec && inst.end_sec <= duration + FRAME_SLACK)
            {
                return Err(Error::Format(format!(
                    "video {} instance {i}: need 0 <= start < end <= duration ({duration})",
                    self.id
                )));
            }
            if inst.class == 0 || inst.class as usize > num_actions {
                return Err(Error::Format(format!(
                    "video {} instance {i}: class {} outside 1..={num_actions}",
                    self.id, inst.class
                )));
            }
        }
        for (i, a) in self.instances.iter().enumerate() {
            for b in &self.instances[i + 1..] {
                if a.class == b.class && a.start_sec < b.end_sec && b.start_sec < a.end_sec {
                    return Err(Error::Format(format!(
                        "video {}: overlapping instances of class {}",
                        self.id, a.class
                    )));
                }
            }
        }
        Ok(())
    }

    /// For every frame, the index of the instance that owns it. Where
    /// instances of different classes overlap, the most recently started one
    /// owns the frame (ties go to the earlier-listed instance).
    pub fn frame_owners(&self) -> Vec<Option<usize>> {
        let mut owners: Vec<Option<usize>> = vec![None; self.num_frames];
        let mut starts: Vec<usize> = vec![0; self.num_frames];
        for (idx, inst) in self.instances.iter().enumerate() {
            let range = inst.frame_range(self.fps, self.num_frames);
            let first = range.start;
            for f in range {
                match owners[f] {
                    Some(_) if starts[f] >= first => {}
                    _ => {
                        owners[f] = Some(idx);
                        starts[f] = first;
                    }
                }
            }
        }
        owners
    }

    /// Ground-truth action starts of this video.
    pub fn ground_truths(&self) -> Vec<ASGroundTruth> {
        self.instances
            .iter()
            .map(|inst| ASGroundTruth {
                video_id: self.id.clone(),
                as_time: inst.start_sec,
                action_class: inst.class,
                ambiguous: inst.ambiguous_start,
            })
            .collect()
    }
}

/// Per-window features of one video; entry `i` describes the window ending
/// at frame `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStream {
    pub video_id: String,
    pub dim: usize,
    pub frames: Vec<Vec<f64>>,
}

impl FeatureStream {
    pub fn new(video_id: impl Into<String>, dim: usize, frames: Vec<Vec<f64>>) -> Result<Self> {
        let video_id = video_id.into();
        for (i, f) in frames.iter().enumerate() {
            if f.len() != dim {
                return Err(Error::Format(format!(
                    "stream {video_id}: entry {i} has {} values, expected {dim}",
                    f.len()
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("stream {video_id}: entry {i} is not finite")));
            }
        }
        Ok(FeatureStream {
            video_id,
            dim,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Annotated videos with their feature streams, kept in matching order.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub videos: Vec<VideoAnnotation>,
    pub streams: Vec<FeatureStream>,
}

impl Corpus {
    pub fn new(videos: Vec<VideoAnnotation>, mut streams: Vec<FeatureStream>) -> Result<Self> {
        let mut ordered = Vec::with_capacity(videos.len());
        for v in &videos {
            let pos = streams
                .iter()
                .position(|s| s.video_id == v.id)
                .ok_or_else(|| Error::Format(format!("no feature stream for video {}", v.id)))?;
            ordered.push(streams.swap_remove(pos));
        }
        Ok(Corpus {
            videos,
            streams: ordered,
        })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VideoAnnotation, &FeatureStream)> {
        self.videos.iter().zip(&self.streams)
    }

    pub fn ground_truths(&self) -> Vec<ASGroundTruth> {
        self.videos.iter().flat_map(VideoAnnotation::ground_truths).collect()
    }

    /// First `n` videos and the rest.
    pub fn split_at(&self, n: usize) -> (Corpus, Corpus) {
        let n = n.min(self.len());
        (
            Corpus {
                videos: self.videos[..n].to_vec(),
                streams: self.streams[..n].to_vec(),
            },
            Corpus {
                videos: self.videos[n..].to_vec(),
                streams: self.streams[n..].to_vec(),
            },
        )
    }
}

/// Windows of one video with their roles and labels.
pub fn build_window_dataset(
    ann: &VideoAnnotation,
    fs: &FeatureStream,
    cfg: &ModelConfig,
) -> Result<Vec<WindowSample>> {
    ann.validate(cfg.num_action_classes)?;
    if fs.is_empty() {
        return Err(Error::Format(format!("video {}: empty feature stream", ann.id)));
    }
    if fs.dim != cfg.feature_dim {
        return Err(Error::Shape(format!(
            "video {}: stream dim {} but model expects {}",
            ann.id, fs.dim, cfg.feature_dim
        )));
    }
    if fs.len() < ann.num_frames {
        return Err(Error::Format(format!(
            "video {}: stream has {} entries for {} frames",
            ann.id,
            fs.len(),
            ann.num_frames
        )));
    }
    let owners = ann.frame_owners();
    let first_frames: Vec<usize> = ann
        .instances
        .iter()
        .map(|i| i.frame_range(ann.fps, ann.num_frames).start)
        .collect();
    let len = cfg.window_len;
    let mut out = Vec::new();
    let mut end = len - 1;
    while end < ann.num_frames {
        let (label, role) = match owners[end] {
            None => (cfg.background_class(), WindowRole::Background),
            Some(idx) => {
                let window_first = end + 1 - len;
                // a window holding the onset frame is a start window even
                // when it is also fully inside the instance
                let role = if window_first > first_frames[idx] {
                    WindowRole::Inside
                } else {
                    WindowRole::Start
                };
                (ann.instances[idx].class, role)
            }
        };
        out.push(WindowSample::new(
            ann.id.clone(),
            end,
            end as f64 / ann.fps,
            fs.frames[end].clone(),
            label,
            role,
        )?);
        end += cfg.stride;
    }
    Ok(out)
}

/// Pairs each start window ending at `t` with the window ending at `t + L`
/// when frames `t+1 ..= t+L` all lie inside the start window's instance.
pub fn build_start_pairs(
    samples: &[WindowSample],
    ann: &VideoAnnotation,
    cfg: &ModelConfig,
) -> Vec<StartPair> {
    let owners = ann.frame_owners();
    let by_end: BTreeMap<usize, &WindowSample> = samples
        .iter()
        .filter(|s| s.video_id() == ann.id)
        .map(|s| (s.end_frame(), s))
        .collect();
    let len = cfg.window_len;
    let mut pairs = Vec::new();
    for start in by_end.values().filter(|s| s.role() == WindowRole::Start) {
        let t = start.end_frame();
        let Some(owner) = owners.get(t).copied().flatten() else {
            continue;
        };
        let range = ann.instances[owner].frame_range(ann.fps, ann.num_frames);
        if !(range.contains(&(t + 1)) && range.contains(&(t + len))) {
            continue;
        }
        if owners[t + len] != Some(owner) {
            continue;
        }
        let Some(follow) = by_end.get(&(t + len)) else {
            continue;
        };
        if follow.label() != start.label() {
            continue;
        }
        let pair = StartPair::new((*start).clone(), follow.with_role(WindowRole::FollowUp))
            .expect("pair invariants hold by construction");
        pairs.push(pair);
    }
    pairs
}

/// All windows and pairs of a corpus.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub samples: Vec<WindowSample>,
    pub pairs: Vec<StartPair>,
}

impl TrainingSet {
    pub fn starts(&self) -> Vec<&WindowSample> {
        self.samples.iter().filter(|s| s.role() == WindowRole::Start).collect()
    }

    pub fn non_starts(&self) -> Vec<&WindowSample> {
        self.samples.iter().filter(|s| s.role() != WindowRole::Start).collect()
    }

    pub fn count(&self, role: WindowRole) -> usize {
        self.samples.iter().filter(|s| s.role() == role).count()
    }
}

/// Builds windows and pairs for every video, merged in video-id order.
pub fn build_training_set(corpus: &Corpus, cfg: &ModelConfig) -> Result<TrainingSet> {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| corpus.videos[a].id.cmp(&corpus.videos[b].id));
    let mut set = TrainingSet::default();
    for i in order {
        let ann = &corpus.videos[i];
        let samples = build_window_dataset(ann, &corpus.streams[i], cfg)?;
        set.pairs.extend(build_start_pairs(&samples, ann, cfg));
        set.samples.extend(samples);
    }
    Ok(set)
}

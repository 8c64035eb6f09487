//! End-to-end runs: synthesize, train with a chosen method subset, pick a
//! threshold on the training split, detect on the test split, evaluate.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{build_training_set, synth_corpus, Corpus, SynthConfig};
use crate::detector::{
    default_grid, detect_scored, grid_search_scored, random_scored_corpus, score_corpus, ScoredStream,
    ThresholdSearch,
};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::nn::{Checkpoint, Discriminator};
use crate::training::{init_networks, pretrain, stream_rng, train_gan, LossRecord, Methods, TrainConfig};
use crate::types::{ASPrediction, EvalConfig, EvalReport, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectConfig {
    /// Threshold candidates for the automatic search.
    #[serde(default = "default_grid")]
    pub grid: Vec<f64>,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig { grid: default_grid() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(default = "default_offsets")]
    pub offsets: Vec<f64>,
    #[serde(default = "default_depth")]
    pub ap_depth: f64,
}

fn default_offsets() -> Vec<f64> {
    (1..=10).map(f64::from).collect()
}

fn default_depth() -> f64 {
    1.0
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            offsets: default_offsets(),
            ap_depth: default_depth(),
        }
    }
}

/// Every tunable of a synthetic experiment in one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    /// The last `test_videos` synthesized videos form the test split.
    pub test_videos: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub detect: DetectConfig,
    #[serde(default)]
    pub eval: EvalSettings,
}

impl ExperimentConfig {
    /// The reference synthetic experiment: 5 classes, 32-dimensional
    /// features, 200 streams with sparse 10 to 30 s actions at 4 fps,
    /// 32-frame windows, 80 test streams.
    pub fn reference() -> Self {
        let mut synth = SynthConfig::new(0, 5, 32, 200);
        synth.fps = 4.0;
        synth.window_len = 32;
        synth.video_sec = [120.0, 180.0];
        synth.action_sec = [10.0, 30.0];
        synth.gap_sec = [20.0, 40.0];
        synth.separation = 24.0;
        let mut model = ModelConfig::new(5, 32, 64);
        model.window_len = 32;
        model.noise_dim = 32;
        model.gen_hidden_dim = 64;
        model.lambda = 0.01;
        ExperimentConfig {
            synth,
            test_videos: 80,
            model,
            train: TrainConfig {
                lambda: 0.01,
                pretrain_iters: 1500,
                gan_iters: 200,
                ..TrainConfig::default()
            },
            detect: DetectConfig::default(),
            eval: EvalSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.feature_dim != self.synth.feature_dim
            || self.model.num_action_classes != self.synth.num_classes
            || self.model.window_len != self.synth.window_len
        {
            return Err(Error::Config(
                "model feature_dim / num_action_classes / window_len must match synth".into(),
            ));
        }
        if self.model.lambda != self.train.lambda {
            return Err(Error::Config(format!(
                "model.lambda ({}) and train.lambda ({}) disagree",
                self.model.lambda, self.train.lambda
            )));
        }
        if self.test_videos == 0 || self.test_videos >= self.synth.num_videos {
            return Err(Error::Config(format!(
                "test_videos must be in 1..{}, got {}",
                self.synth.num_videos, self.test_videos
            )));
        }
        if self.detect.grid.is_empty() || self.detect.grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("threshold grid must be non-empty within [0, 1]".into()));
        }
        self.eval_config().validate()
    }

    /// Overrides both the data and the training seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            num_classes: self.model.num_action_classes,
            offset_thresholds: self.eval.offsets.clone(),
            ap_depth: self.eval.ap_depth,
        }
    }
}

/// Synthesizes the corpus and splits off the test videos.
pub fn synthesize(cfg: &ExperimentConfig) -> Result<(Corpus, Corpus)> {
    cfg.validate()?;
    let all = synth_corpus(&cfg.synth)?.corpus;
    Ok(all.split_at(all.len() - cfg.test_videos))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRecord>,
}

/// Trains from scratch on `corpus` with `methods` applied to `train`.
pub fn train_model(corpus: &Corpus, model: &ModelConfig, train: &TrainConfig, methods: Methods) -> Result<TrainedModel> {
    let cfg = methods.apply(train);
    cfg.validate()?;
    let set = build_training_set(corpus, model)?;
    let (mut d, mut g) = init_networks(model, &set, cfg.seed)?;
    let mut log = pretrain(&mut d, &set, &cfg)?;
    let generator = if cfg.gan_iters > 0 {
        log.extend(train_gan(&mut g, &mut d, &set, &cfg)?);
        Some(g)
    } else {
        None
    };
    Ok(TrainedModel {
        checkpoint: Checkpoint {
            discriminator: d,
            generator,
        },
        log,
    })
}

/// Fixed threshold or grid search on the training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Auto,
    Fixed(f64),
}

impl FromStr for Threshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Threshold::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if (0.0..=1.0).contains(&v) => Ok(Threshold::Fixed(v)),
            _ => Err(Error::Config(format!("threshold must be 'auto' or a value in [0, 1], got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRun {
    pub threshold: f64,
    pub search: Option<ThresholdSearch>,
    pub predictions: Vec<ASPrediction>,
    pub report: EvalReport,
}

/// Where window scores come from.
#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    Model(&'a Discriminator),
    /// Random-guess scores; train and test draw from separate streams.
    Random { seed: u64 },
}

const RANDOM_TEST_STREAM: u64 = 0;
const RANDOM_TRAIN_STREAM: u64 = 1;

impl Scorer<'_> {
    fn score(&self, corpus: &Corpus, cfg: &ExperimentConfig, stream: u64) -> Result<Vec<ScoredStream>> {
        let (k, len, stride) = (cfg.model.num_action_classes, cfg.model.window_len, cfg.model.stride);
        match *self {
            Scorer::Model(d) => score_corpus(d, corpus, len, stride),
            Scorer::Random { seed } => random_scored_corpus(&mut stream_rng(seed, stream), corpus, k, len, stride),
        }
    }

    /// Scores of the streams to detect on.
    pub fn score_test(&self, corpus: &Corpus, cfg: &ExperimentConfig) -> Result<Vec<ScoredStream>> {
        self.score(corpus, cfg, RANDOM_TEST_STREAM)
    }

    /// Scores of the split used by the automatic threshold search.
    pub fn score_train(&self, corpus: &Corpus, cfg: &ExperimentConfig) -> Result<Vec<ScoredStream>> {
        self.score(corpus, cfg, RANDOM_TRAIN_STREAM)
    }
}

/// Resolves `threshold`; `Auto` needs the training split.
pub fn resolve_threshold(
    scorer: Scorer<'_>,
    threshold: Threshold,
    train: Option<&Corpus>,
    cfg: &ExperimentConfig,
) -> Result<(f64, Option<ThresholdSearch>)> {
    match threshold {
        Threshold::Fixed(t) => Ok((t, None)),
        Threshold::Auto => {
            let train = train.ok_or_else(|| Error::Config("automatic threshold needs a training split".into()))?;
            let streams = scorer.score_train(train, cfg)?;
            let s = grid_search_scored(&streams, &train.ground_truths(), &cfg.detect.grid, &cfg.eval_config())?;
            Ok((s.threshold, Some(s)))
        }
    }
}

/// Streams `test` through the detector at `cfg.model.stride`.
pub fn detect(
    scorer: Scorer<'_>,
    threshold: Threshold,
    train: Option<&Corpus>,
    test: &Corpus,
    cfg: &ExperimentConfig,
) -> Result<(f64, Option<ThresholdSearch>, Vec<ASPrediction>)> {
    let (theta, search) = resolve_threshold(scorer, threshold, train, cfg)?;
    let streams = scorer.score_test(test, cfg)?;
    let preds = detect_scored(&streams, cfg.model.num_action_classes, theta)?;
    Ok((theta, search, preds))
}

/// [`detect`] followed by evaluation against the test annotations.
pub fn detect_and_evaluate(
    scorer: Scorer<'_>,
    threshold: Threshold,
    train: &Corpus,
    test: &Corpus,
    cfg: &ExperimentConfig,
) -> Result<DetectionRun> {
    let (threshold, search, predictions) = detect(scorer, threshold, Some(train), test, cfg)?;
    let report = evaluate(&predictions, &test.ground_truths(), &cfg.eval_config())?;
    Ok(DetectionRun {
        threshold,
        search,
        predictions,
        report,
    })
}

/// The random-guess baseline through the same threshold search and
/// detector.
pub fn random_guess_run(train: &Corpus, test: &Corpus, cfg: &ExperimentConfig, seed: u64) -> Result<DetectionRun> {
    detect_and_evaluate(Scorer::Random { seed }, Threshold::Auto, train, test, cfg)
}

/// Train with `methods`, then detect with an automatically chosen threshold.
pub fn run_methods(cfg: &ExperimentConfig, train: &Corpus, test: &Corpus, methods: Methods) -> Result<(TrainedModel, DetectionRun)> {
    let model = train_model(train, &cfg.model, &cfg.train, methods)?;
    let run = detect_and_evaluate(
        Scorer::Model(&model.checkpoint.discriminator),
        Threshold::Auto,
        train,
        test,
        cfg,
    )?;
    Ok((model, run))
}

/// Average mAP of every method subset and of random guessing, per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    pub seeds: Vec<u64>,
    pub random_guess: Vec<f64>,
    /// Rows in [`Methods::ablation_grid`] order.
    pub runs: Vec<(Methods, Vec<f64>)>,
}

impl Ablation {
    pub fn median(&self, methods: Methods) -> Option<f64> {
        self.runs.iter().find(|(m, _)| *m == methods).map(|(_, v)| median(v))
    }
}

/// Trains and evaluates every subset of [`Methods::ablation_grid`] for each
/// seed. Corpus and training share the seed.
pub fn run_ablation(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Ablation> {
    let grid = Methods::ablation_grid();
    let mut runs: Vec<(Methods, Vec<f64>)> = grid.iter().map(|&m| (m, Vec::new())).collect();
    let mut random_guess = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = cfg.clone().with_seed(seed);
        let (train, test) = synthesize(&cfg)?;
        random_guess.push(random_guess_run(&train, &test, &cfg, seed)?.report.average_map);
        for (m, scores) in &mut runs {
            scores.push(run_methods(&cfg, &train, &test, *m)?.1.report.average_map);
        }
    }
    Ok(Ablation {
        seeds: seeds.to_vec(),
        random_guess,
        runs,
    })
}

/// Median; the mean of the two middle values for even lengths, NaN when
/// empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

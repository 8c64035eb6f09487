//! Domain types shared by every stage of the pipeline.
//!
//! Class ids are 1-based: actions are `1..=K`, background is `K + 1` and the
//! generated hard-negative class is `K + 2` (training only).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-based class identifier.
pub type ClassId = u32;

fn default_noise_dim() -> usize {
    100
}

fn default_window_len() -> usize {
    16
}

fn default_stride() -> usize {
    1
}

fn default_lambda() -> f64 {
    1.0
}

/// Network and windowing hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_action_classes: usize,
    pub feature_dim: usize,
    pub fc_hidden_dim: usize,
    #[serde(default = "default_noise_dim")]
    pub noise_dim: usize,
    pub gen_hidden_dim: usize,
    /// Weight of the temporal-consistency term.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Window length in frames.
    #[serde(default = "default_window_len")]
    pub window_len: usize,
    /// Window stride in frames.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

impl ModelConfig {
    pub fn new(num_action_classes: usize, feature_dim: usize, fc_hidden_dim: usize) -> Self {
        ModelConfig {
            num_action_classes,
            feature_dim,
            fc_hidden_dim,
            noise_dim: default_noise_dim(),
            gen_hidden_dim: fc_hidden_dim,
            lambda: default_lambda(),
            window_len: default_window_len(),
            stride: default_stride(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_action_classes", self.num_action_classes),
            ("feature_dim", self.feature_dim),
            ("fc_hidden_dim", self.fc_hidden_dim),
            ("noise_dim", self.noise_dim),
            ("gen_hidden_dim", self.gen_hidden_dim),
            ("window_len", self.window_len),
            ("stride", self.stride),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// `K`.
    pub fn num_actions(&self) -> ClassId {
        self.num_action_classes as ClassId
    }

    pub fn background_class(&self) -> ClassId {
        self.num_actions() + 1
    }

    pub fn hard_negative_class(&self) -> ClassId {
        self.num_actions() + 2
    }

    /// Width of the classifier head during training (`K + 2`).
    pub fn train_outputs(&self) -> usize {
        self.num_action_classes + 2
    }

    /// Width of the classifier head at inference (`K + 1`).
    pub fn infer_outputs(&self) -> usize {
        self.num_action_classes + 1
    }

    pub fn is_action(&self, class: ClassId) -> bool {
        (1..=self.num_actions()).contains(&class)
    }
}

/// Temporal role of a training window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowRole {
    /// Contains the action-start frame and ends inside the action.
    Start,
    /// Fully inside the action, immediately after a start window.
    FollowUp,
    /// Fully inside an action instance.
    Inside,
    /// Last frame outside every action instance.
    Background,
}

#[derive(Deserialize)]
struct RawWindowSample {
    video_id: String,
    end_frame: usize,
    end_time: f64,
    features: Vec<f64>,
    label: ClassId,
    role: WindowRole,
}

/// One fixed-length window, reduced to its feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWindowSample")]
pub struct WindowSample {
    video_id: String,
    end_frame: usize,
    end_time: f64,
    features: Vec<f64>,
    label: ClassId,
    role: WindowRole,
}

impl TryFrom<RawWindowSample> for WindowSample {
    type Error = Error;

    fn try_from(raw: RawWindowSample) -> Result<Self> {
        WindowSample::new(
            raw.video_id,
            raw.end_frame,
            raw.end_time,
            raw.features,
            raw.label,
            raw.role,
        )
    }
}

impl WindowSample {
    /// Builds a sample, checking the label/role pairing that does not depend
    /// on `K` (start windows carry an action label, background windows do
    /// not). [`WindowSample::check`] validates against a concrete config.
    pub fn new(
        video_id: impl Into<String>,
        end_frame: usize,
        end_time: f64,
        features: Vec<f64>,
        label: ClassId,
        role: WindowRole,
    ) -> Result<Self> {
        if !(end_time.is_finite() && end_time >= 0.0) {
            return Err(Error::Data(format!("invalid window end time {end_time}")));
        }
        if label == 0 {
            return Err(Error::Data("class ids are 1-based".into()));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature at index {i}")));
        }
        Ok(WindowSample {
            video_id: video_id.into(),
            end_frame,
            end_time,
            features,
            label,
            role,
        })
    }

    /// Validates label range and role consistency against `cfg`.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.features.len() != cfg.feature_dim {
            return Err(Error::Shape(format!(
                "window has {} features, expected {}",
                self.features.len(),
                cfg.feature_dim
            )));
        }
        let ok = match self.role {
            WindowRole::Start | WindowRole::FollowUp | WindowRole::Inside => {
                cfg.is_action(self.label)
            }
            WindowRole::Background => self.label == cfg.background_class(),
        };
        if !ok {
            return Err(Error::Data(format!(
                "label {} inconsistent with role {:?}",
                self.label, self.role
            )));
        }
        Ok(())
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn end_frame(&self) -> usize {
        self.end_frame
    }

    pub fn end_time(&self) -> f64 {
        self.end_time
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn label(&self) -> ClassId {
        self.label
    }

    pub fn role(&self) -> WindowRole {
        self.role
    }

    pub(crate) fn with_role(&self, role: WindowRole) -> WindowSample {
        WindowSample {
            role,
            ..self.clone()
        }
    }
}

/// A start window and the follow-up window that lies fully inside the same
/// action instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartPair {
    start: WindowSample,
    follow_up: WindowSample,
}

impl StartPair {
    pub fn new(start: WindowSample, follow_up: WindowSample) -> Result<Self> {
        if start.role != WindowRole::Start || follow_up.role != WindowRole::FollowUp {
            return Err(Error::Data(format!(
                "pair roles must be (start, follow_up), got ({:?}, {:?})",
                start.role, follow_up.role
            )));
        }
        if start.video_id != follow_up.video_id {
            return Err(Error::Data("paired windows come from different videos".into()));
        }
        if follow_up.end_time <= start.end_time {
            return Err(Error::Data("follow-up window must end after the start window".into()));
        }
        if start.label != follow_up.label {
            return Err(Error::Data("paired windows carry different labels".into()));
        }
        Ok(StartPair { start, follow_up })
    }

    pub fn start(&self) -> &WindowSample {
        &self.start
    }

    pub fn follow_up(&self) -> &WindowSample {
        &self.follow_up
    }

    pub fn label(&self) -> ClassId {
        self.start.label
    }
}

/// A ground-truth action start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ASGroundTruth {
    pub video_id: String,
    pub as_time: f64,
    pub action_class: ClassId,
    pub ambiguous: bool,
}

impl ASGroundTruth {
    pub fn new(
        video_id: impl Into<String>,
        as_time: f64,
        action_class: ClassId,
        ambiguous: bool,
    ) -> Result<Self> {
        if !(as_time.is_finite() && as_time >= 0.0) {
            return Err(Error::Data(format!("invalid action-start time {as_time}")));
        }
        if action_class == 0 {
            return Err(Error::Data("class ids are 1-based".into()));
        }
        Ok(ASGroundTruth {
            video_id: video_id.into(),
            as_time,
            action_class,
            ambiguous,
        })
    }
}

/// A detected action start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ASPrediction {
    pub video_id: String,
    pub time: f64,
    pub action_class: ClassId,
    pub score: f64,
}

impl ASPrediction {
    pub fn new(
        video_id: impl Into<String>,
        time: f64,
        action_class: ClassId,
        score: f64,
    ) -> Result<Self> {
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::Data(format!("invalid prediction time {time}")));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Data(format!("prediction score {score} outside [0, 1]")));
        }
        if action_class == 0 {
            return Err(Error::Data("class ids are 1-based".into()));
        }
        Ok(ASPrediction {
            video_id: video_id.into(),
            time,
            action_class,
            score,
        })
    }
}

fn default_ap_depth() -> f64 {
    1.0
}

/// Evaluation protocol settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of action classes; predictions outside `1..=K` are rejected.
    pub num_classes: usize,
    /// Temporal offset thresholds in seconds, ascending.
    pub offset_thresholds: Vec<f64>,
    /// Recall depth `X` in `(0, 1]`.
    #[serde(default = "default_ap_depth")]
    pub ap_depth: f64,
}

impl EvalConfig {
    pub fn new(num_classes: usize, offset_thresholds: Vec<f64>) -> Self {
        EvalConfig {
            num_classes,
            offset_thresholds,
            ap_depth: 1.0,
        }
    }

    /// Offsets `1, 2, ..., n` seconds.
    pub fn unit_offsets(num_classes: usize, n: usize) -> Self {
        Self::new(num_classes, (1..=n).map(|s| s as f64).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be at least 1".into()));
        }
        if self.offset_thresholds.is_empty() {
            return Err(Error::Config("at least one offset threshold is required".into()));
        }
        if self
            .offset_thresholds
            .iter()
            .any(|o| !(o.is_finite() && *o > 0.0))
        {
            return Err(Error::Config("offset thresholds must be positive".into()));
        }
        if self.offset_thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("offset thresholds must be strictly ascending".into()));
        }
        if !(self.ap_depth > 0.0 && self.ap_depth <= 1.0) {
            return Err(Error::Config(format!(
                "ap_depth must lie in (0, 1], got {}",
                self.ap_depth
            )));
        }
        Ok(())
    }
}

/// AP of one class at one offset threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: ClassId,
    pub offset: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetMap {
    pub offset: f64,
    pub map: f64,
}

/// Raw matching counts of one class at one offset threshold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub class: ClassId,
    pub offset: OrderedOffset,
    pub num_gt: usize,
    pub true_positives: usize,
    pub false_positives: usize,
}

/// An offset threshold compared by bit pattern, so counts can derive `Eq`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OrderedOffset(pub f64);

impl PartialEq for OrderedOffset {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for OrderedOffset {}

/// Result of the point-level evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap_depth: f64,
    pub per_class_ap: Vec<ClassAp>,
    pub map_per_offset: Vec<OffsetMap>,
    pub average_map: f64,
    pub counts: Vec<ClassCounts>,
}

impl EvalReport {
    pub fn ap(&self, class: ClassId, offset: f64) -> Option<f64> {
        self.per_class_ap
            .iter()
            .find(|c| c.class == class && c.offset == offset)
            .map(|c| c.ap)
    }

    pub fn map_at(&self, offset: f64) -> Option<f64> {
        self.map_per_offset
            .iter()
            .find(|m| m.offset == offset)
            .map(|m| m.map)
    }
}

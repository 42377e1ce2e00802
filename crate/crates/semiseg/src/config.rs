//! Experiment configuration.
//!
//! Config files are flat key-value text with dotted keys (`#` starts a
//! comment):
//!
//! ```text
//! mode = semi                 # semi | self
//! dataset = synthetic:blobs   # phc|fluogfp|fluohoechst|bigbrain|synthetic:<kind>
//! data.root = datasets/phc    # directory for non-synthetic datasets
//! data.n = 200                # synthetic sample count
//! data.size = 128             # synthetic image side
//! pipeline = P3               # P1..P4: sets unsup_loss + checkpoint_policy
//! unsup_loss = iid            # kldiv | iid
//! checkpoint_policy = best_supervised   # best_supervised | best_final
//! label_ratio = 0.1
//! optimizer = adam            # adam | rmsprop
//! lr = 0.001
//! lr_schedule.factor = 0.1
//! lr_schedule.period = 40
//! epochs = 100
//! batch_size = 1
//! seed = 7
//! unsup_weight = 1.0
//! aug.order = strong-first    # strong-first | weak-first
//! strong.n_ops = 2
//! strong.magnitude = 30
//! weak.scale_range = 0.95 1.05
//! weak.rot_range = -15 15
//! weak.flip_prob = 0.5
//! model.base_channels = 64
//! model.aux_classes = 4       # default 2 * class count (self mode)
//! iic.displacement = 0
//! val_frac = 0.1
//! test_frac = 0.2
//! ```
//!
//! Defaults follow the published training setups: the semi-supervised mode
//! uses Adam at 0.001 with a step schedule, 100 epochs, batch 1; the
//! self-supervised mode uses RMSProp at 0.01, 10 epochs, batch 10.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{StrongPolicy, WeakPolicy};
use crate::dataset::SyntheticKind;
use crate::error::{Error, Result};
use crate::model::ORIGINAL_BASE_CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Semi,
    SelfSup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnsupLoss {
    KlDiv,
    Iid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CheckpointPolicy {
    BestSupervised,
    BestFinal,
}

impl fmt::Display for CheckpointPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointPolicy::BestSupervised => write!(f, "best_supervised"),
            CheckpointPolicy::BestFinal => write!(f, "best_final"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
    RmsProp,
}

/// The four training pipelines: unsupervised loss x checkpoint policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pipeline {
    P1,
    P2,
    P3,
    P4,
}

impl Pipeline {
    pub const ALL: [Pipeline; 4] = [Pipeline::P1, Pipeline::P2, Pipeline::P3, Pipeline::P4];

    pub fn unsup_loss(&self) -> UnsupLoss {
        match self {
            Pipeline::P1 | Pipeline::P2 => UnsupLoss::KlDiv,
            Pipeline::P3 | Pipeline::P4 => UnsupLoss::Iid,
        }
    }

    pub fn checkpoint_policy(&self) -> CheckpointPolicy {
        match self {
            Pipeline::P1 | Pipeline::P3 => CheckpointPolicy::BestSupervised,
            Pipeline::P2 | Pipeline::P4 => CheckpointPolicy::BestFinal,
        }
    }

    pub fn from_parts(loss: UnsupLoss, policy: CheckpointPolicy) -> Self {
        match (loss, policy) {
            (UnsupLoss::KlDiv, CheckpointPolicy::BestSupervised) => Pipeline::P1,
            (UnsupLoss::KlDiv, CheckpointPolicy::BestFinal) => Pipeline::P2,
            (UnsupLoss::Iid, CheckpointPolicy::BestSupervised) => Pipeline::P3,
            (UnsupLoss::Iid, CheckpointPolicy::BestFinal) => Pipeline::P4,
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "P1" => Ok(Pipeline::P1),
            "P2" => Ok(Pipeline::P2),
            "P3" => Ok(Pipeline::P3),
            "P4" => Ok(Pipeline::P4),
            other => Err(Error::Config(format!("unknown pipeline {other}, expected P1..P4"))),
        }
    }
}

/// Multiply the learning rate by `factor` every `period` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub factor: f64,
    pub period: usize,
}

impl LrSchedule {
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        base * self.factor.powi((epoch / self.period) as i32)
    }
}

/// Whether the unlabeled branch applies the strong policy before or after
/// the shared weak transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugOrder {
    StrongFirst,
    WeakFirst,
}

/// Which data feeds a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetRef {
    /// A named on-disk dataset under `root`.
    Named { name: String, root: PathBuf },
    /// Generated in memory.
    Synthetic { kind: SyntheticKind, n: usize, size: (usize, usize) },
}

impl DatasetRef {
    pub fn label(&self) -> String {
        match self {
            DatasetRef::Named { name, .. } => name.clone(),
            DatasetRef::Synthetic { kind, .. } => format!("synthetic:{}", kind.as_str()),
        }
    }
}

/// Full description of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub dataset: DatasetRef,
    pub unsup_loss: UnsupLoss,
    pub checkpoint_policy: CheckpointPolicy,
    pub label_ratio: f64,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub unsup_weight: f64,
    pub weak: WeakPolicy,
    pub strong: StrongPolicy,
    pub aug_order: AugOrder,
    pub base_channels: usize,
    /// Auxiliary head size; `None` means 2x the class count in self mode.
    pub aux_classes: Option<usize>,
    pub iic_displacement: usize,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl PipelineConfig {
    /// Published semi-supervised setup: Adam, 0.001 + step schedule,
    /// 100 epochs, batch 1.
    pub fn semi_defaults(dataset: DatasetRef) -> Self {
        Self {
            mode: Mode::Semi,
            dataset,
            unsup_loss: UnsupLoss::KlDiv,
            checkpoint_policy: CheckpointPolicy::BestSupervised,
            label_ratio: 0.1,
            optimizer: OptimizerKind::Adam,
            lr: 0.001,
            lr_schedule: LrSchedule { factor: 0.1, period: 40 },
            epochs: 100,
            batch_size: 1,
            seed: 0,
            unsup_weight: 1.0,
            weak: WeakPolicy::default(),
            strong: StrongPolicy::default(),
            aug_order: AugOrder::StrongFirst,
            base_channels: ORIGINAL_BASE_CHANNELS,
            aux_classes: None,
            iic_displacement: 0,
            val_frac: 0.1,
            test_frac: 0.2,
        }
    }

    /// Published self-supervised setup: RMSProp, 0.01, 10 epochs, batch 10.
    pub fn self_defaults(dataset: DatasetRef) -> Self {
        Self {
            mode: Mode::SelfSup,
            unsup_loss: UnsupLoss::Iid,
            checkpoint_policy: CheckpointPolicy::BestFinal,
            label_ratio: 1.0,
            optimizer: OptimizerKind::RmsProp,
            lr: 0.01,
            epochs: 10,
            batch_size: 10,
            ..Self::semi_defaults(dataset)
        }
    }

    pub fn pipeline(&self) -> Pipeline {
        Pipeline::from_parts(self.unsup_loss, self.checkpoint_policy)
    }

    pub fn with_pipeline(mut self, pipeline: Pipeline) -> Self {
        self.unsup_loss = pipeline.unsup_loss();
        self.checkpoint_policy = pipeline.checkpoint_policy();
        self
    }

    /// Stable hash of the canonical serialized configuration.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.label_ratio > 0.0 && self.label_ratio <= 1.0) {
            return Err(Error::Config(format!("label_ratio {} outside (0, 1]", self.label_ratio)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.lr_schedule.period == 0 {
            return Err(Error::Config("lr_schedule.period must be positive".into()));
        }
        if self.strong.magnitude > crate::augment::MAX_MAGNITUDE {
            return Err(Error::Config(format!(
                "strong.magnitude {} exceeds {}",
                self.strong.magnitude,
                crate::augment::MAX_MAGNITUDE
            )));
        }
        Ok(())
    }
}

/// Flat key-value config text.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    map: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { map })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("key {key}: cannot parse `{raw}`"))),
        }
    }

    fn pair(&self, key: &str) -> Result<Option<(f64, f64)>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => {
                let parts: Vec<&str> = raw.split_whitespace().collect();
                if parts.len() != 2 {
                    return Err(Error::Config(format!("key {key}: expected two numbers")));
                }
                let lo = parts[0]
                    .parse()
                    .map_err(|_| Error::Config(format!("key {key}: bad number {}", parts[0])))?;
                let hi = parts[1]
                    .parse()
                    .map_err(|_| Error::Config(format!("key {key}: bad number {}", parts[1])))?;
                Ok(Some((lo, hi)))
            }
        }
    }

    fn known_keys() -> &'static [&'static str] {
        &[
            "mode",
            "dataset",
            "data.root",
            "data.n",
            "data.size",
            "pipeline",
            "unsup_loss",
            "checkpoint_policy",
            "label_ratio",
            "optimizer",
            "lr",
            "lr_schedule.factor",
            "lr_schedule.period",
            "epochs",
            "batch_size",
            "seed",
            "unsup_weight",
            "aug.order",
            "strong.n_ops",
            "strong.magnitude",
            "weak.scale_range",
            "weak.rot_range",
            "weak.flip_prob",
            "model.base_channels",
            "model.aux_classes",
            "iic.displacement",
            "val_frac",
            "test_frac",
        ]
    }

    /// Builds a full config: mode-appropriate defaults overridden by the
    /// present keys. Unknown keys are rejected.
    pub fn to_pipeline_config(&self) -> Result<PipelineConfig> {
        for key in self.map.keys() {
            if !Self::known_keys().contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
        }

        let dataset = match self.map.get("dataset").map(|s| s.as_str()) {
            None => DatasetRef::Synthetic { kind: SyntheticKind::Blobs, n: 200, size: (128, 128) },
            Some(name) => {
                if let Some(kind_name) = name.strip_prefix("synthetic:") {
                    let kind = SyntheticKind::parse(kind_name).ok_or_else(|| {
                        Error::Config(format!("unknown synthetic kind `{kind_name}`"))
                    })?;
                    let n = self.parsed::<usize>("data.n")?.unwrap_or(200);
                    let side = self.parsed::<usize>("data.size")?.unwrap_or(128);
                    DatasetRef::Synthetic { kind, n, size: (side, side) }
                } else {
                    if crate::dataset::builtin_spec(name).is_none() {
                        return Err(Error::Config(format!("unknown dataset `{name}`")));
                    }
                    let root = self
                        .map
                        .get("data.root")
                        .map(PathBuf::from)
                        .unwrap_or_else(|| PathBuf::from("datasets").join(name));
                    DatasetRef::Named { name: name.to_string(), root }
                }
            }
        };

        let mode = match self.map.get("mode").map(|s| s.as_str()) {
            None | Some("semi") => Mode::Semi,
            Some("self") => Mode::SelfSup,
            Some(other) => return Err(Error::Config(format!("unknown mode `{other}`"))),
        };
        let mut cfg = match mode {
            Mode::Semi => PipelineConfig::semi_defaults(dataset),
            Mode::SelfSup => PipelineConfig::self_defaults(dataset),
        };

        if let Some(p) = self.map.get("pipeline") {
            cfg = cfg.with_pipeline(p.parse()?);
        }
        if let Some(loss) = self.map.get("unsup_loss") {
            cfg.unsup_loss = match loss.as_str() {
                "kldiv" => UnsupLoss::KlDiv,
                "iid" => UnsupLoss::Iid,
                other => return Err(Error::Config(format!("unknown unsup_loss `{other}`"))),
            };
        }
        if let Some(policy) = self.map.get("checkpoint_policy") {
            cfg.checkpoint_policy = match policy.as_str() {
                "best_supervised" => CheckpointPolicy::BestSupervised,
                "best_final" => CheckpointPolicy::BestFinal,
                other => return Err(Error::Config(format!("unknown checkpoint_policy `{other}`"))),
            };
        }
        if let Some(opt) = self.map.get("optimizer") {
            cfg.optimizer = match opt.as_str() {
                "adam" => OptimizerKind::Adam,
                "rmsprop" => OptimizerKind::RmsProp,
                other => return Err(Error::Config(format!("unknown optimizer `{other}`"))),
            };
        }
        if let Some(order) = self.map.get("aug.order") {
            cfg.aug_order = match order.as_str() {
                "strong-first" => AugOrder::StrongFirst,
                "weak-first" => AugOrder::WeakFirst,
                other => return Err(Error::Config(format!("unknown aug.order `{other}`"))),
            };
        }

        if let Some(v) = self.parsed("label_ratio")? {
            cfg.label_ratio = v;
        }
        if let Some(v) = self.parsed("lr")? {
            cfg.lr = v;
        }
        if let Some(v) = self.parsed("lr_schedule.factor")? {
            cfg.lr_schedule.factor = v;
        }
        if let Some(v) = self.parsed("lr_schedule.period")? {
            cfg.lr_schedule.period = v;
        }
        if let Some(v) = self.parsed("epochs")? {
            cfg.epochs = v;
        }
        if let Some(v) = self.parsed("batch_size")? {
            cfg.batch_size = v;
        }
        if let Some(v) = self.parsed("seed")? {
            cfg.seed = v;
        }
        if let Some(v) = self.parsed("unsup_weight")? {
            cfg.unsup_weight = v;
        }
        if let Some(v) = self.parsed("strong.n_ops")? {
            cfg.strong.n_ops = v;
        }
        if let Some(v) = self.parsed("strong.magnitude")? {
            cfg.strong.magnitude = v;
        }
        if let Some(v) = self.pair("weak.scale_range")? {
            cfg.weak.scale_range = v;
        }
        if let Some(v) = self.pair("weak.rot_range")? {
            cfg.weak.rot_range_deg = v;
        }
        if let Some(v) = self.parsed("weak.flip_prob")? {
            cfg.weak.flip_prob = v;
        }
        if let Some(v) = self.parsed("model.base_channels")? {
            cfg.base_channels = v;
        }
        if let Some(v) = self.parsed("model.aux_classes")? {
            cfg.aux_classes = Some(v);
        }
        if let Some(v) = self.parsed("iic.displacement")? {
            cfg.iic_displacement = v;
        }
        if let Some(v) = self.parsed("val_frac")? {
            cfg.val_frac = v;
        }
        if let Some(v) = self.parsed("test_frac")? {
            cfg.test_frac = v;
        }

        cfg.validate()?;
        Ok(cfg)
    }
}

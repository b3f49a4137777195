//! Run configuration, read from a TOML file.
//!
//! Every key has a default, so an empty file is a valid configuration of the
//! full-size model. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{generate_synthetic, Dataset, SyntheticActionSpec};
use crate::error::{Error, Result};
use crate::graph::{Layout, PartMap, SkeletonGraph};
use crate::model::{LossWeights, NetworkConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Joint,
    Part,
    Hybrid,
}

impl std::str::FromStr for StreamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(StreamKind::Joint),
            "part" => Ok(StreamKind::Part),
            "hybrid" => Ok(StreamKind::Hybrid),
            _ => Err(Error::config("stream", format!("unknown stream `{s}` (expected joint, part or hybrid)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutName {
    Ntu25,
    Body15,
}

impl From<LayoutName> for Layout {
    fn from(l: LayoutName) -> Layout {
        match l {
            LayoutName::Ntu25 => Layout::Ntu25,
            LayoutName::Body15 => Layout::Body15,
        }
    }
}

/// Which subset a neighbor at the same hop distance from the root as the
/// center joint falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EqualDistance {
    Centrifugal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `Λ^{-1/2} A Λ^{-1/2}` with zero rows for zero degrees.
    Symmetric,
}

/// How clips shorter than `train.frames` are extended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShortSequence {
    RepeatLast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartSection {
    pub name: String,
    pub joints: Vec<usize>,
}

/// Either a built-in layout, or a custom topology given by `joints`,
/// `edges` and `root` (all three together).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub layout: LayoutName,
    pub joints: Option<usize>,
    pub edges: Option<Vec<[usize; 2]>>,
    pub root: Option<usize>,
    /// Number of neighbor subsets; only the three-way spatial partition is
    /// implemented.
    pub subsets: usize,
    pub max_distance: usize,
    pub equal_distance: EqualDistance,
    pub normalization: Normalization,
    /// Part map of the part stream; defaults to the layout's five parts.
    pub parts: Option<Vec<PartSection>>,
}

impl Default for GraphSection {
    fn default() -> Self {
        GraphSection {
            layout: LayoutName::Body15,
            joints: None,
            edges: None,
            root: None,
            subsets: 3,
            max_distance: 1,
            equal_distance: EqualDistance::Centrifugal,
            normalization: Normalization::Symmetric,
            parts: None,
        }
    }
}

impl GraphSection {
    fn is_custom(&self) -> bool {
        self.joints.is_some() || self.edges.is_some() || self.root.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub encoder_width: usize,
    pub augment_width: usize,
    pub hidden_width: usize,
    pub attention_width: usize,
    pub layers: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub dropout: f64,
    pub forget_bias: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            encoder_width: 256,
            augment_width: 512,
            hidden_width: 512,
            attention_width: 128,
            layers: 3,
            pool_window: 2,
            pool_stride: 2,
            dropout: 0.5,
            forget_bias: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub lambda: f64,
    pub beta: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        LossSection {
            lambda: w.lambda,
            beta: w.beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Frames sampled from every sequence.
    pub frames: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Translate each sequence so the root joint of its first frame is the
    /// origin.
    pub center: bool,
    pub short_sequence: ShortSequence,
    /// Stop once the clean training accuracy reaches this value.
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            frames: 100,
            learning_rate: 0.0005,
            lr_decay: 0.1,
            lr_decay_every: 20,
            batch_size: 64,
            epochs: 60,
            center: true,
            short_sequence: ShortSequence::RepeatLast,
            stop_at_train_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub classes: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    pub noise_std: f64,
    pub min_frames: usize,
    pub max_frames: usize,
    pub max_yaw: f64,
    pub distractor_amplitude: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let spec = SyntheticActionSpec::standard(3);
        SyntheticSection {
            classes: 3,
            train_samples: 300,
            test_samples: 90,
            train_seed: 1,
            test_seed: 2,
            noise_std: spec.noise_std,
            min_frames: spec.frames.0,
            max_frames: spec.frames.1,
            max_yaw: spec.max_yaw,
            distractor_amplitude: spec.distractor_amplitude,
        }
    }
}

impl SyntheticSection {
    pub fn spec(&self) -> SyntheticActionSpec {
        SyntheticActionSpec {
            noise_std: self.noise_std,
            frames: (self.min_frames, self.max_frames),
            max_yaw: self.max_yaw,
            distractor_amplitude: self.distractor_amplitude,
            ..SyntheticActionSpec::standard(self.classes)
        }
    }
}

/// Dataset container files, or a synthetic benchmark when no paths are set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub synthetic: SyntheticSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub variant: String,
    pub stream: StreamKind,
    pub graph: GraphSection,
    pub model: ModelSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub data: DataSection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            variant: Variant::AGC_LSTM.to_string(),
            stream: StreamKind::Joint,
            graph: GraphSection::default(),
            model: ModelSection::default(),
            loss: LossSection::default(),
            train: TrainSection::default(),
            data: DataSection::default(),
        }
    }
}

impl TrainConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config {
            field: e.span().map_or_else(|| "config".into(), |span| key_at(text, span.start)),
            reason: e.message().trim().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn variant(&self) -> Result<Variant> {
        self.variant.parse()
    }

    pub fn skeleton(&self) -> Result<SkeletonGraph> {
        let g = &self.graph;
        let (n, edges, root) = if g.is_custom() {
            let (Some(n), Some(edges), Some(root)) = (g.joints, g.edges.as_ref(), g.root) else {
                let missing = [("graph.joints", g.joints.is_none()), ("graph.edges", g.edges.is_none())]
                    .iter()
                    .find(|(_, m)| *m)
                    .map_or("graph.root", |(f, _)| f);
                return Err(Error::config(missing, "a custom graph needs joints, edges and root"));
            };
            (n, edges.iter().map(|&[a, b]| (a, b)).collect(), root)
        } else {
            let layout = Layout::from(g.layout);
            (layout.joint_count(), layout.edges(), layout.root())
        };
        SkeletonGraph::new(n, &edges, root, g.subsets, g.max_distance).map_err(|e| prefix_field(e, "graph."))
    }

    /// The configured part map, or the layout default.
    pub fn parts(&self) -> Result<PartMap> {
        let map = match &self.graph.parts {
            Some(parts) => PartMap::new(parts.iter().map(|p| (p.name.clone(), p.joints.clone())).collect()),
            None if self.graph.is_custom() => {
                return Err(Error::config("graph.parts", "a custom graph needs an explicit part map"))
            }
            None => Ok(Layout::from(self.graph.layout).parts()),
        }
        .map_err(|e| prefix_field(e, "graph."))?;
        let skeleton = self.skeleton()?;
        skeleton.part_graph(&map).map_err(|e| prefix_field(e, "graph."))?;
        Ok(map)
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.loss.lambda,
            beta: self.loss.beta,
        }
    }

    /// Network shape for a problem with `classes` classes.
    pub fn network(&self, classes: usize) -> Result<NetworkConfig> {
        let m = &self.model;
        let cfg = NetworkConfig {
            classes,
            encoder_width: m.encoder_width,
            augment_width: m.augment_width,
            hidden_width: m.hidden_width,
            attention_width: m.attention_width,
            layers: m.layers,
            pooling: (m.pool_window, m.pool_stride),
            dropout: m.dropout,
            forget_bias: m.forget_bias,
            variant: self.variant()?,
        };
        cfg.validate().map_err(|e| prefix_field(e, "model."))?;
        Ok(cfg)
    }

    /// Training and test splits: the container files when set, otherwise
    /// the synthetic benchmark. Both must match the configured graph.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let skeleton = self.skeleton()?;
        let (train, test) = match (&self.data.train, &self.data.test) {
            (Some(a), Some(b)) => (read_dataset(a)?, read_dataset(b)?),
            (Some(_), None) => return Err(Error::config("data.test", "set together with data.train")),
            (None, Some(_)) => return Err(Error::config("data.train", "set together with data.test")),
            (None, None) => {
                let s = &self.data.synthetic;
                if skeleton.joint_count() != Layout::Body15.joint_count() {
                    return Err(Error::config("graph", "synthetic data needs a 15-joint graph"));
                }
                let spec = s.spec();
                (
                    generate_synthetic(&spec, s.train_samples, s.train_seed),
                    generate_synthetic(&spec, s.test_samples, s.test_seed),
                )
            }
        };
        for (split, d) in [("train", &train), ("test", &test)] {
            if d.joints != skeleton.joint_count() {
                return Err(Error::Data(format!(
                    "{split} split has {} joints, the configured graph has {}",
                    d.joints,
                    skeleton.joint_count()
                )));
            }
        }
        if train.class_names != test.class_names {
            return Err(Error::Data("train and test splits list different classes".into()));
        }
        Ok((train, test))
    }

    pub fn validate(&self) -> Result<()> {
        self.variant()?;
        if self.graph.subsets != 3 {
            return Err(Error::config("graph.subsets", "only the 3-subset spatial partition is supported"));
        }
        if self.graph.max_distance != 1 {
            return Err(Error::config("graph.max_distance", "only 1-hop neighborhoods are supported"));
        }
        self.skeleton()?;
        if self.graph.parts.is_some() || self.stream != StreamKind::Joint {
            self.parts()?;
        }
        self.network(2)?;
        let t = &self.train;
        let positive = [
            ("train.frames", t.frames),
            ("train.batch_size", t.batch_size),
            ("train.epochs", t.epochs),
            ("train.lr_decay_every", t.lr_decay_every),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if !(t.lr_decay.is_finite() && t.lr_decay > 0.0) {
            return Err(Error::config("train.lr_decay", "must be positive"));
        }
        if let Some(a) = t.stop_at_train_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::config("train.stop_at_train_accuracy", "must lie in [0, 1]"));
            }
        }
        // Layer lengths must stay positive for the sampled clip length.
        self.network(2)?
            .layer_lengths(t.frames)
            .map_err(|e| prefix_field(e, "train.frames: "))?;
        for (name, v) in [("loss.lambda", self.loss.lambda), ("loss.beta", self.loss.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        let d = &self.data;
        if d.train.is_some() != d.test.is_some() {
            return Err(Error::config("data.train", "set both data.train and data.test, or neither"));
        }
        if d.train.is_none() {
            let s = &d.synthetic;
            if !(2..=8).contains(&s.classes) {
                return Err(Error::config("data.synthetic.classes", "must be between 2 and 8"));
            }
            if s.train_samples == 0 || s.test_samples == 0 {
                return Err(Error::config("data.synthetic.train_samples", "both splits need samples"));
            }
            if s.train_seed == s.test_seed {
                return Err(Error::config("data.synthetic.test_seed", "must differ from train_seed"));
            }
            if s.min_frames == 0 || s.min_frames > s.max_frames {
                return Err(Error::config("data.synthetic.min_frames", "need 1 <= min_frames <= max_frames"));
            }
            if !(s.noise_std.is_finite() && s.noise_std >= 0.0) {
                return Err(Error::config("data.synthetic.noise_std", "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Reads a dataset container, naming the file in errors.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Dataset::from_text(&text).map_err(|e| match e {
        Error::Parse { line, reason } => Error::Parse {
            line,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    })
}

/// Dotted name of the key on the line containing byte `pos`.
fn key_at(text: &str, pos: usize) -> String {
    let pos = pos.min(text.len());
    let line_start = text[..pos].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    let key = line.split('=').next().unwrap_or("").trim();
    let section = text[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    match (section, key.is_empty() || key.starts_with('[')) {
        (Some(sec), true) => sec,
        (Some(sec), false) => format!("{sec}.{key}"),
        (None, true) => "config".into(),
        (None, false) => key.to_string(),
    }
}

fn prefix_field(e: Error, prefix: &str) -> Error {
    match e {
        Error::Config { field, reason } if !field.starts_with(prefix) => Error::Config {
            field: format!("{prefix}{field}"),
            reason,
        },
        Error::Graph(reason) if prefix == "graph." => Error::Config {
            field: "graph".into(),
            reason,
        },
        other => other,
    }
}

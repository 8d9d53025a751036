//! Experiment configuration: parsing, defaults, validation and hashing.

use std::fmt;
use std::str::FromStr;

use graphtx::{ModelConfig, SizeTag, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BenchError, Result};
use crate::metrics::{LossKind, MetricKind};

/// Whether a task predicts per graph or per node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskLevel {
    Graph,
    Node,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskType {
    Regression,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskName {
    NodeDegreeReg,
    SpdToAnchorReg,
    TriangleCountReg,
    ConnectivityCls,
    BipartiteCls,
}

impl TaskName {
    pub const ALL: [TaskName; 5] = [
        TaskName::NodeDegreeReg,
        TaskName::SpdToAnchorReg,
        TaskName::TriangleCountReg,
        TaskName::ConnectivityCls,
        TaskName::BipartiteCls,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::NodeDegreeReg => "node-degree-reg",
            TaskName::SpdToAnchorReg => "spd-to-anchor-reg",
            TaskName::TriangleCountReg => "triangle-count-reg",
            TaskName::ConnectivityCls => "connectivity-cls",
            TaskName::BipartiteCls => "bipartite-cls",
        }
    }

    pub fn level(self) -> TaskLevel {
        match self {
            TaskName::NodeDegreeReg | TaskName::SpdToAnchorReg => TaskLevel::Node,
            _ => TaskLevel::Graph,
        }
    }

    pub fn task_type(self) -> TaskType {
        match self {
            TaskName::ConnectivityCls | TaskName::BipartiteCls => TaskType::Binary,
            _ => TaskType::Regression,
        }
    }

    pub fn default_metric(self) -> MetricKind {
        match self.task_type() {
            TaskType::Regression => MetricKind::Mae,
            TaskType::Binary => MetricKind::RocAuc,
        }
    }

    pub fn loss(self) -> LossKind {
        match self.task_type() {
            TaskType::Regression => LossKind::Mae,
            TaskType::Binary => LossKind::BceWithLogits,
        }
    }

    /// Metrics that fit the task type.
    pub fn allowed_metrics(self) -> &'static [MetricKind] {
        match self.task_type() {
            TaskType::Regression => &[MetricKind::Mae],
            TaskType::Binary => &[MetricKind::RocAuc, MetricKind::Ap, MetricKind::Accuracy],
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskName {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        TaskName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| BenchError::config("task.name", format!("unknown task `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrDecay {
    Linear,
}

/// Named starting point for the training fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-length schedule; the default.
    Full,
    /// Short schedule and small batches for single-core runs.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub attn_dropout: f64,
    pub ffn_dropout: f64,
    pub max_steps: usize,
    pub warmup_steps: usize,
    pub peak_lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub adam_eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lr_decay: LrDecay,
    /// Steps between validation passes.
    pub eval_interval: usize,
    /// Stop once the validation metric is strictly better than this value.
    pub early_stop: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            attn_dropout: 0.1,
            ffn_dropout: 0.1,
            max_steps: 1_000_000,
            warmup_steps: 40_000,
            peak_lr: 2e-4,
            batch_size: 256,
            weight_decay: 1e-3,
            clip_norm: 5.0,
            adam_eps: 1e-8,
            beta1: 0.9,
            beta2: 0.99,
            lr_decay: LrDecay::Linear,
            eval_interval: 10_000,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Full => Self::default(),
            Preset::Desk => Self {
                max_steps: 3_000,
                warmup_steps: 120,
                batch_size: 16,
                eval_interval: 250,
                ..Self::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, m: String| Err(BenchError::config(format!("train.{f}"), m));
        for (f, v) in [("attn_dropout", self.attn_dropout), ("ffn_dropout", self.ffn_dropout)] {
            if !(0.0..1.0).contains(&v) {
                return err(f, format!("{v} is outside [0, 1)"));
            }
        }
        if self.max_steps == 0 {
            return err("max_steps", "must be positive".into());
        }
        if self.warmup_steps >= self.max_steps {
            return err("warmup_steps", format!("{} is not below max_steps {}", self.warmup_steps, self.max_steps));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return err("peak_lr", format!("{} is not a positive finite rate", self.peak_lr));
        }
        if self.batch_size == 0 {
            return err("batch_size", "must be positive".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return err("weight_decay", format!("{} is negative or not finite", self.weight_decay));
        }
        if !(self.clip_norm > 0.0) {
            return err("clip_norm", format!("{} is not positive", self.clip_norm));
        }
        if !(self.adam_eps > 0.0) {
            return err("adam_eps", format!("{} is not positive", self.adam_eps));
        }
        for (f, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return err(f, format!("{v} is outside [0, 1)"));
            }
        }
        if self.eval_interval == 0 {
            return err("eval_interval", "must be positive".into());
        }
        if let Some(t) = self.early_stop {
            if !t.is_finite() {
                return err("early_stop", "must be finite".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub max_hop: usize,
    pub max_nbrs: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { max_hop: 2, max_nbrs: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub name: TaskName,
    pub level: TaskLevel,
    pub metric: MetricKind,
    /// Number of generated graphs.
    pub instances: usize,
    /// Seed of the generated dataset.
    pub data_seed: u64,
}

/// Model dimensions: a size tag or explicit dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSize {
    Tag { size: SizeTag },
    Custom { layers: usize, hidden: usize, ffn_hidden: usize, heads: usize },
}

impl ModelSize {
    /// Dimensions with the dropouts of `train`.
    pub fn resolve(&self, train: &TrainConfig) -> Result<ModelConfig> {
        let mut cfg = match *self {
            ModelSize::Tag { size } => ModelConfig::from_size(size),
            ModelSize::Custom { layers, hidden, ffn_hidden, heads } => {
                ModelConfig::custom(layers, hidden, ffn_hidden, heads)
                    .map_err(|e| BenchError::config("model", e.to_string()))?
            }
        };
        cfg.attn_dropout = train.attn_dropout;
        cfg.ffn_dropout = train.ffn_dropout;
        Ok(cfg)
    }

    pub fn label(&self) -> String {
        match *self {
            ModelSize::Tag { size } => size.as_str().to_string(),
            ModelSize::Custom { layers, hidden, ffn_hidden, heads } => {
                format!("L{layers}-d{hidden}-f{ffn_hidden}-h{heads}")
            }
        }
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub variant: Variant,
    pub model: ModelSize,
    pub task: TaskConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    seed: Option<u64>,
    variant: Option<String>,
    #[serde(default)]
    model: RawModel,
    task: Option<RawTask>,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    sampler: RawSampler,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    size: Option<String>,
    layers: Option<usize>,
    hidden: Option<usize>,
    ffn_hidden: Option<usize>,
    heads: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    name: String,
    level: Option<TaskLevel>,
    metric: Option<String>,
    instances: Option<usize>,
    data_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    preset: Option<Preset>,
    attn_dropout: Option<f64>,
    ffn_dropout: Option<f64>,
    max_steps: Option<usize>,
    warmup_steps: Option<usize>,
    peak_lr: Option<f64>,
    batch_size: Option<usize>,
    weight_decay: Option<f64>,
    clip_norm: Option<f64>,
    adam_eps: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    lr_decay: Option<LrDecay>,
    eval_interval: Option<usize>,
    early_stop: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSampler {
    max_hop: Option<usize>,
    max_nbrs: Option<usize>,
}

pub const DEFAULT_INSTANCES: usize = 200;

impl RawTrain {
    fn resolve(self) -> TrainConfig {
        let mut t = TrainConfig::preset(self.preset.unwrap_or(Preset::Full));
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { t.$f = v; } )* };
        }
        take!(
            attn_dropout, ffn_dropout, max_steps, warmup_steps, peak_lr, batch_size, weight_decay,
            clip_norm, adam_eps, beta1, beta2, lr_decay, eval_interval
        );
        if self.early_stop.is_some() {
            t.early_stop = self.early_stop;
        }
        t
    }
}

impl RawModel {
    fn resolve(self) -> Result<ModelSize> {
        let dims = [self.layers, self.hidden, self.ffn_hidden, self.heads];
        match (self.size, dims) {
            (Some(s), [None, None, None, None]) => {
                let size = s.parse::<SizeTag>().map_err(|e| BenchError::config("model.size", e.to_string()))?;
                Ok(ModelSize::Tag { size })
            }
            (Some(_), _) => Err(BenchError::config("model", "give either `size` or explicit dimensions, not both")),
            (None, [None, None, None, None]) => Ok(ModelSize::Tag { size: SizeTag::Small }),
            (None, [Some(layers), Some(hidden), Some(ffn_hidden), Some(heads)]) => {
                Ok(ModelSize::Custom { layers, hidden, ffn_hidden, heads })
            }
            (None, _) => Err(BenchError::config(
                "model",
                "explicit dimensions need all of layers, hidden, ffn_hidden and heads",
            )),
        }
    }
}

impl ExperimentConfig {
    /// Default experiment for `task` with the desk preset.
    pub fn desk(task: TaskName, variant: Variant, seed: u64) -> Self {
        Self {
            seed,
            variant,
            model: ModelSize::Tag { size: SizeTag::Small },
            task: TaskConfig {
                name: task,
                level: task.level(),
                metric: task.default_metric(),
                instances: DEFAULT_INSTANCES,
                data_seed: seed,
            },
            train: TrainConfig::preset(Preset::Desk),
            sampler: SamplerConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawExperiment = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let field = field_from_toml_error(&msg).unwrap_or_else(|| "<document>".into());
            BenchError::config(field, msg)
        })?;
        Self::resolve(raw)
    }

    fn resolve(raw: RawExperiment) -> Result<Self> {
        let seed = raw.seed.unwrap_or(0);
        let variant = match raw.variant {
            None => Variant::Vanilla,
            Some(s) => s.parse::<Variant>().map_err(|e| BenchError::config("variant", e.to_string()))?,
        };
        let rt = raw.task.ok_or_else(|| BenchError::config("task", "missing [task] section"))?;
        let name: TaskName = rt.name.parse()?;
        if let Some(level) = rt.level {
            if level != name.level() {
                return Err(BenchError::config(
                    "task.level",
                    format!("`{name}` is a {:?}-level task", name.level()),
                ));
            }
        }
        let metric = match rt.metric {
            None => name.default_metric(),
            Some(m) => m.parse()?,
        };
        let cfg = Self {
            seed,
            variant,
            model: raw.model.resolve()?,
            task: TaskConfig {
                name,
                level: name.level(),
                metric,
                instances: rt.instances.unwrap_or(DEFAULT_INSTANCES),
                data_seed: rt.data_seed.unwrap_or(seed),
            },
            train: raw.train.resolve(),
            sampler: SamplerConfig {
                max_hop: raw.sampler.max_hop.unwrap_or(SamplerConfig::default().max_hop),
                max_nbrs: raw.sampler.max_nbrs.unwrap_or(SamplerConfig::default().max_nbrs),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model_config()?;
        // The text form stores integers as i64.
        if i64::try_from(self.seed).is_err() {
            return Err(BenchError::config("seed", "must fit in a signed 64-bit integer"));
        }
        if i64::try_from(self.task.data_seed).is_err() {
            return Err(BenchError::config("task.data_seed", "must fit in a signed 64-bit integer"));
        }
        let t = &self.task;
        if t.level != t.name.level() {
            return Err(BenchError::config("task.level", format!("`{}` is a {:?}-level task", t.name, t.name.level())));
        }
        if !t.name.allowed_metrics().contains(&t.metric) {
            return Err(BenchError::config(
                "task.metric",
                format!("`{}` does not fit {:?} task `{}`", t.metric, t.name.task_type(), t.name),
            ));
        }
        if t.instances < 10 {
            return Err(BenchError::config("task.instances", format!("{} is below the minimum of 10", t.instances)));
        }
        if self.variant.needs_edge_features() {
            return Err(BenchError::config("variant", format!("`{}` needs edge features the tasks lack", self.variant)));
        }
        if t.level == TaskLevel::Node && self.sampler.max_nbrs == 0 {
            return Err(BenchError::config("sampler.max_nbrs", "must be positive"));
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        self.model.resolve(&self.train)
    }

    /// Canonical text form, also written as the run manifest.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Leading 16 hex digits of the SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Dotted field path when a TOML error names an unknown or mistyped key.
fn field_from_toml_error(msg: &str) -> Option<String> {
    let start = msg.find('`')?;
    let rest = &msg[start + 1..];
    let end = rest.find('`')?;
    msg.starts_with("unknown field").then(|| rest[..end].to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[task]\nname = \"node-degree-reg\"\n";

    #[test]
    fn full_preset_is_the_default() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.train.max_steps, 1_000_000);
        assert_eq!(c.train.warmup_steps, 40_000);
        assert_eq!(c.train.batch_size, 256);
        let m = c.model_config().unwrap();
        assert_eq!((m.layers, m.hidden, m.heads), (6, 80, 8));
        assert_eq!(c.task.metric, MetricKind::Mae);
        assert_eq!(c.sampler, SamplerConfig { max_hop: 2, max_nbrs: 10 });
    }

    #[test]
    fn preset_and_overrides() {
        let text = "seed = 3\nvariant = \"at:spb\"\n[task]\nname = \"bipartite-cls\"\nmetric = \"ap\"\n\
                    [train]\npreset = \"desk\"\nbatch_size = 4\n[model]\nlayers = 2\nhidden = 8\nffn_hidden = 8\nheads = 2\n";
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(c.train.max_steps, 3_000);
        assert_eq!(c.train.batch_size, 4);
        assert_eq!(c.task.data_seed, 3);
        assert_eq!(c.task.metric, MetricKind::Ap);
        assert_eq!(c.model.label(), "L2-d8-f8-h2");
    }

    #[test]
    fn manifest_round_trips() {
        let c = ExperimentConfig::desk(TaskName::SpdToAnchorReg, "ga:alternate".parse().unwrap(), 9);
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut other = c.clone();
        other.seed = 10;
        assert_ne!(other.hash(), c.hash());
    }

    fn field_of(text: &str) -> String {
        match ExperimentConfig::from_toml_str(text) {
            Err(BenchError::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of("[task]\nname = \"nope\"\n"), "task.name");
        assert_eq!(field_of(&format!("{MINIMAL}[train]\nwarmup_steps = 2000000\n")), "train.warmup_steps");
        assert_eq!(field_of(&format!("{MINIMAL}[train]\nbatch_size = 0\n")), "train.batch_size");
        assert_eq!(field_of(&format!("{MINIMAL}metric = \"roc_auc\"\n")), "task.metric");
        assert_eq!(field_of(&format!("variant = \"at:bogus\"\n{MINIMAL}")), "variant");
        assert_eq!(field_of(&format!("{MINIMAL}[model]\nsize = \"huge\"\n")), "model.size");
        assert_eq!(field_of(&format!("{MINIMAL}[model]\nlayers = 2\n")), "model");
        assert_eq!(field_of(&format!("{MINIMAL}[train]\nbogus = 1\n")), "bogus");
        assert_eq!(field_of("seed = 1\n"), "task");
        assert_eq!(field_of(&format!("{MINIMAL}level = \"graph\"\n")), "task.level");
    }
}

//! Pipeline configuration, read from a TOML file.
//!
//! Relative paths are resolved against the directory holding the file.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use topicforge_core::cluster::{Linkage, DEFAULT_THRESHOLD as CLUSTER_THRESHOLD};
use topicforge_core::dedup::{Thresholds, DEFAULT_THRESHOLD as DEDUP_THRESHOLD};
use topicforge_core::experiment::{PowerGrid, TrafficModel, Variant};
use topicforge_core::ingest::CandidateSource;
use topicforge_core::metric::{NegativeRatio, TrainingSetOptions};
use topicforge_core::model::{ModelConfig, NegativeLoss};
use topicforge_core::tokenize::DEFAULT_SEQ_LEN;
use topicforge_core::topicpage::{Strategy, DEFAULT_ITEMS_PER_PAGE};
use topicforge_core::train::{Optimizer, TrainConfig};

use crate::checkpoint::Dtype;

/// Invalid or unreadable configuration (exit status 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateFile {
    pub path: PathBuf,
    #[serde(default = "default_source")]
    pub source: CandidateSource,
}

fn default_source() -> CandidateSource {
    CandidateSource::File
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub click_log: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub blocklist: Option<PathBuf>,
    pub items: Option<PathBuf>,
    #[serde(default)]
    pub candidates: Vec<CandidateFile>,
}

/// `"auto"` or a number of negatives per positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RatioSetting {
    Number(f64),
    Word(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSection {
    pub negative_ratio: RatioSetting,
    pub interactive_floor: Option<f64>,
}

impl Default for MetricSection {
    fn default() -> Self {
        MetricSection {
            negative_ratio: RatioSetting::Word("auto".into()),
            interactive_floor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizeSection {
    pub seq_len: usize,
    pub min_count: usize,
}

impl Default for TokenizeSection {
    fn default() -> Self {
        TokenizeSection {
            seq_len: DEFAULT_SEQ_LEN,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub model_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_hidden_dim: usize,
    pub output_dim: usize,
    pub checkpoint_dtype: Dtype,
}

impl Default for ModelSection {
    fn default() -> Self {
        let desk = ModelConfig::desk(2, DEFAULT_SEQ_LEN);
        ModelSection {
            model_dim: desk.model_dim,
            num_layers: desk.num_layers,
            num_heads: desk.num_heads,
            ffn_hidden_dim: desk.ffn_hidden_dim,
            output_dim: desk.output_dim,
            checkpoint_dtype: Dtype::Float32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub eval_fraction: f64,
    pub negative_loss: NegativeLoss,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection::from(TrainConfig::default())
    }
}

impl From<TrainConfig> for TrainSection {
    fn from(c: TrainConfig) -> Self {
        TrainSection {
            optimizer: c.optimizer,
            learning_rate: c.learning_rate,
            batch_size: c.batch_size,
            epochs: c.epochs,
            weight_decay: c.weight_decay,
            eval_fraction: c.eval_fraction,
            negative_loss: c.negative_loss,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            weight_decay: self.weight_decay,
            eval_fraction: self.eval_fraction,
            negative_loss: self.negative_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    /// Update only the classification layer.
    pub freeze_encoder: bool,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let t = TrainSection::default();
        FinetuneSection {
            optimizer: t.optimizer,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            weight_decay: t.weight_decay,
            freeze_encoder: false,
        }
    }
}

impl FinetuneSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            weight_decay: self.weight_decay,
            eval_fraction: 0.0,
            negative_loss: NegativeLoss::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub threshold: f64,
    pub linkage: Linkage,
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection {
            threshold: CLUSTER_THRESHOLD,
            linkage: Linkage::Average,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupSection {
    pub threshold: f64,
    pub shelf_threshold: Option<f64>,
    pub facet_threshold: Option<f64>,
    pub cache_capacity: usize,
}

impl Default for DedupSection {
    fn default() -> Self {
        DedupSection {
            threshold: DEDUP_THRESHOLD,
            shelf_threshold: None,
            facet_threshold: None,
            cache_capacity: crate::cache::DEFAULT_CAPACITY,
        }
    }
}

impl DedupSection {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            shelf: self.shelf_threshold.unwrap_or(self.threshold),
            facet: self.facet_threshold.unwrap_or(self.threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub quota: usize,
    pub strategy: Strategy,
}

impl Default for SelectSection {
    fn default() -> Self {
        SelectSection {
            quota: 100,
            strategy: Strategy::Pipeline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmitSection {
    pub k: usize,
}

impl Default for EmitSection {
    fn default() -> Self {
        EmitSection {
            k: DEFAULT_ITEMS_PER_PAGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerSection {
    pub windows: Vec<usize>,
    pub lifts: Vec<f64>,
    pub runs: usize,
}

impl Default for PowerSection {
    fn default() -> Self {
        PowerSection {
            windows: vec![40, 80, 120, 160],
            lifts: vec![0.01, 0.02, 0.04, 0.08],
            runs: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub start: String,
    pub days: usize,
    pub variant: Variant,
    pub alpha: f64,
    /// Observed daily clicks (`{date: clicks}` JSON); simulated when absent.
    pub daily_clicks: Option<PathBuf>,
    pub base_mean: f64,
    pub noise_sd: f64,
    pub lift: f64,
    pub power: PowerSection,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            start: "2021-01-01".into(),
            days: 120,
            variant: Variant::Pooled,
            alpha: 0.05,
            daily_clicks: None,
            base_mean: 10_000.0,
            noise_sd: 300.0,
            lift: 0.04,
            power: PowerSection::default(),
        }
    }
}

impl ExperimentSection {
    pub fn traffic(&self) -> TrafficModel {
        TrafficModel {
            base_mean: self.base_mean,
            noise_sd: self.noise_sd,
            lift: self.lift,
        }
    }

    pub fn power_grid(&self, seed: u64) -> PowerGrid {
        PowerGrid {
            windows: self.power.windows.clone(),
            lifts: self.power.lifts.clone(),
            base_mean: self.base_mean,
            noise_sd: self.noise_sd,
            variant: self.variant,
            alpha: self.alpha,
            runs: self.power.runs,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workdir: Option<PathBuf>,
    pub inputs: Inputs,
    pub metric: MetricSection,
    pub tokenize: TokenizeSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub finetune: FinetuneSection,
    pub cluster: ClusterSection,
    pub dedup: DedupSection,
    pub select: SelectSection,
    pub emit: EmitSection,
    pub experiment: ExperimentSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and resolves relative input paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut self.inputs;
        for p in [&mut i.click_log, &mut i.catalog, &mut i.lexicon, &mut i.blocklist, &mut i.items]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        for c in &mut i.candidates {
            fix(&mut c.path);
        }
        if let Some(p) = &mut self.experiment.daily_clicks {
            fix(p);
        }
        if let Some(p) = &mut self.workdir {
            fix(p);
        }
    }

    pub fn negative_ratio(&self) -> Result<NegativeRatio, ConfigError> {
        match &self.metric.negative_ratio {
            RatioSetting::Word(w) if w == "auto" => Ok(NegativeRatio::Auto),
            RatioSetting::Number(x) if *x >= 0.0 && x.is_finite() => Ok(NegativeRatio::PerPositive(*x)),
            other => err(format!("metric.negative_ratio must be \"auto\" or a non-negative number, got {other:?}")),
        }
    }

    pub fn training_set_options(&self) -> Result<TrainingSetOptions, ConfigError> {
        Ok(TrainingSetOptions {
            negative_ratio: self.negative_ratio()?,
            seed: self.seed,
            interactive_floor: self.metric.interactive_floor,
        })
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            seq_len: self.tokenize.seq_len,
            model_dim: self.model.model_dim,
            num_layers: self.model.num_layers,
            num_heads: self.model.num_heads,
            ffn_hidden_dim: self.model.ffn_hidden_dim,
            output_dim: self.model.output_dim,
            num_classes: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.negative_ratio()?;
        if let Some(f) = self.metric.interactive_floor {
            if !(0.0..=1.0).contains(&f) {
                return err("metric.interactive_floor must lie in [0, 1]");
            }
        }
        if self.tokenize.seq_len == 0 {
            return err("tokenize.seq_len must be at least 1");
        }
        self.model_config(2)
            .validate()
            .map_err(|e| ConfigError(format!("model: {e}")))?;
        for (name, t) in [("train", self.train.to_train_config(0)), ("finetune", self.finetune.to_train_config(0))] {
            t.validate().map_err(|e| ConfigError(format!("{name}: {e}")))?;
        }
        if !(0.0..=2.0).contains(&self.cluster.threshold) {
            return err("cluster.threshold is a cosine distance and must lie in [0, 2]");
        }
        let t = self.dedup.thresholds();
        for (name, v) in [("threshold", self.dedup.threshold), ("shelf_threshold", t.shelf), ("facet_threshold", t.facet)] {
            if !(0.0..=1.0).contains(&v) {
                return err(format!("dedup.{name} must lie in [0, 1]"));
            }
        }
        if self.emit.k == 0 {
            return err("emit.k must be at least 1");
        }
        let e = &self.experiment;
        if e.days == 0 || !e.days.is_multiple_of(4) {
            return err(format!("experiment.days must be a positive multiple of 4, got {}", e.days));
        }
        if e.power.windows.iter().any(|&d| d == 0 || d % 4 != 0) {
            return err("experiment.power.windows must be positive multiples of 4");
        }
        if !(e.alpha > 0.0 && e.alpha < 1.0) {
            return err("experiment.alpha must lie in (0, 1)");
        }
        if !(e.base_mean > 0.0) || !(e.noise_sd >= 0.0) {
            return err("experiment.base_mean must be positive and noise_sd non-negative");
        }
        topicforge_core::experiment::date_window(&e.start, 1).map_err(|x| ConfigError(format!("experiment.start: {x}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = PipelineConfig::from_toml("").unwrap();
        assert_eq!(cfg.dedup.threshold, 0.86);
        assert_eq!(cfg.cluster.threshold, 0.15);
        assert_eq!(cfg.emit.k, 24);
        assert_eq!(cfg.dedup.cache_capacity, 10_000);
        assert_eq!(cfg.negative_ratio().unwrap(), NegativeRatio::Auto);
    }

    #[test]
    fn sections_parse() {
        let cfg = PipelineConfig::from_toml(
            r#"
seed = 3
[inputs]
click_log = "clicks.csv"
candidates = [{ path = "t.jsonl", source = "trending" }]
[metric]
negative_ratio = 1.5
[finetune]
epochs = 7
freeze_encoder = true
[dedup]
facet_threshold = 0.9
[select]
strategy = "top-clicks"
"#,
        )
        .unwrap();
        assert_eq!(cfg.negative_ratio().unwrap(), NegativeRatio::PerPositive(1.5));
        assert_eq!(cfg.finetune.epochs, 7);
        assert!(cfg.finetune.freeze_encoder);
        assert_eq!(cfg.dedup.thresholds(), Thresholds { shelf: 0.86, facet: 0.9 });
        assert_eq!(cfg.select.strategy, Strategy::TopClicks);
        assert_eq!(cfg.inputs.candidates[0].source, CandidateSource::Trending);
    }

    #[test]
    fn bad_values_rejected() {
        for bad in [
            "[metric]\nnegative_ratio = \"lots\"",
            "[dedup]\nthreshold = 1.5",
            "[experiment]\ndays = 122",
            "[experiment]\nstart = \"yesterday\"",
            "[train]\nlearning_rate = 0.0",
            "[model]\nmodel_dim = 30\nnum_heads = 4",
            "[emit]\nk = 0",
            "[tpyo]\nx = 1",
            "[train]\nlearnig_rate = 0.1",
        ] {
            assert!(PipelineConfig::from_toml(bad).is_err(), "{bad}");
        }
    }
}

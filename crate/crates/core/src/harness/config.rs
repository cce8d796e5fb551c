use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synthetic::SyntheticWorldConfig;
use crate::datamodel::SchemaOptions;
use crate::error::{Error, Result};
use crate::evalmetrics::MetricParams;
use crate::networks::{ModelConfig, Task, TrainConfig};
use crate::pipeline::{RelevanceConfig, SamplingConfig};
use crate::textmatch::{SemanticScorerConfig, DEFAULT_MAX_VOCAB};

/// Where impressions come from. Exactly one source must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub impressions: Option<PathBuf>,
    pub synthetic: Option<SyntheticWorldConfig>,
    /// Train, validation and test fractions over (query, customer) sessions.
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            impressions: None,
            synthetic: None,
            split: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Feed the query-document semantic score to the model.
    pub semantic_feature: bool,
    pub embed_dim: usize,
    pub max_categories: usize,
    pub max_vocab: usize,
    pub scorer: SemanticScorerConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            semantic_feature: true,
            embed_dim: 8,
            max_categories: 1000,
            max_vocab: DEFAULT_MAX_VOCAB,
            scorer: SemanticScorerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingMode {
    /// Each task's MRR ranks by that task's probability.
    #[default]
    PerTask,
    /// Every task's MRR ranks by the loss-weighted sum of probabilities.
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mrr_k: usize,
    pub ranking: RankingMode,
    pub pd: MetricParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mrr_k: 1,
            ranking: RankingMode::PerTask,
            pd: MetricParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub step: f64,
    pub epochs: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { step: 0.1, epochs: 2 }
    }
}

/// One experiment. The top-level `seed` drives every stage: split, sampling,
/// initialization, shuffling, the PD sample and the random baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub relevance_task: bool,
    pub relevance_weight: f64,
    pub sampling: Option<SamplingConfig>,
    pub relevance: RelevanceConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub grid: GridConfig,
    #[serde(skip)]
    pub source: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "mmoe".into(),
            seed: 0,
            out_dir: PathBuf::from("runs/mmoe"),
            data: DataConfig::default(),
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            relevance_task: false,
            relevance_weight: 0.2,
            sampling: None,
            relevance: RelevanceConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            grid: GridConfig::default(),
            source: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, resolving relative paths against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid experiment config: {e}")))?;
        cfg.source = Some(text.to_string());
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        if let Some(p) = cfg.data.impressions.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// The config as it was read, or a canonical rendering if built in code.
    pub fn to_toml(&self) -> Result<String> {
        match &self.source {
            Some(s) => Ok(s.clone()),
            None => toml::to_string(self).map_err(|e| Error::Config(format!("cannot render config: {e}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.impressions, &self.data.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("set either data.impressions or data.synthetic, not both".into()));
            }
            (None, None) => return Err(Error::Config("no data source: set data.impressions or data.synthetic".into())),
            (_, Some(w)) => w.validate()?,
            _ => {}
        }
        let s = self.data.split;
        if s.iter().any(|&f| !(f > 0.0)) || ((s.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must be positive and sum to 1, got {s:?}")));
        }
        if self.model.mmoe.has_relevance() {
            return Err(Error::Config(
                "enable the relevance task with `relevance_task = true`, not in model.mmoe.tasks".into(),
            ));
        }
        if !(self.relevance_weight >= 0.0) {
            return Err(Error::Config("relevance_weight must be >= 0".into()));
        }
        self.model_config().validate()?;
        if let Some(s) = &self.sampling {
            s.validate()?;
        }
        self.relevance.validate()?;
        self.train.validate()?;
        self.eval.pd.validate()?;
        if self.eval.mrr_k == 0 {
            return Err(Error::Config("eval.mrr_k must be >= 1".into()));
        }
        if self.eval.pd.task == Task::Relevance {
            return Err(Error::Config("PD ranks by a binary task".into()));
        }
        Ok(())
    }

    /// The network configuration with the relevance toggle applied.
    pub fn model_config(&self) -> ModelConfig {
        let mut m = self.model.clone();
        if self.relevance_task {
            m.mmoe = m.mmoe.with_relevance(self.relevance_weight);
            m.mmoe.relevance_classes = self.relevance.classes;
        }
        m
    }

    pub fn schema_options(&self) -> SchemaOptions {
        SchemaOptions {
            embed_dim: self.features.embed_dim,
            text_dim: self.model.text.dim,
            max_categories: self.features.max_categories,
            mask_semantic: !self.features.semantic_feature,
        }
    }
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textmatch::{MatchingMode, TextEncoderConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Click,
    Atc,
    Trx,
    Relevance,
}

impl Task {
    pub const BINARY: [Task; 3] = [Task::Click, Task::Atc, Task::Trx];

    pub fn name(self) -> &'static str {
        match self {
            Task::Click => "click",
            Task::Atc => "atc",
            Task::Trx => "trx",
            Task::Relevance => "relevance",
        }
    }

    pub fn is_binary(self) -> bool {
        self != Task::Relevance
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "click" => Ok(Task::Click),
            "atc" => Ok(Task::Atc),
            "trx" => Ok(Task::Trx),
            "relevance" => Ok(Task::Relevance),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BottomKind {
    #[default]
    Dcn,
    Ftt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcnConfig {
    pub cross_layers: usize,
    /// One entry per deep layer.
    pub deep_widths: Vec<usize>,
}

impl Default for DcnConfig {
    fn default() -> Self {
        Self {
            cross_layers: 2,
            deep_widths: vec![128, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FttConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub out_dim: usize,
}

impl Default for FttConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            layers: 2,
            heads: 2,
            ff_dim: 64,
            out_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmoeConfig {
    pub num_experts: usize,
    pub expert_widths: Vec<usize>,
    pub tower_widths: Vec<usize>,
    pub tasks: Vec<Task>,
    /// Loss weight per entry of `tasks`.
    pub weights: Vec<f64>,
    pub relevance_classes: usize,
}

impl Default for MmoeConfig {
    fn default() -> Self {
        Self {
            num_experts: 5,
            expert_widths: vec![64, 32],
            tower_widths: vec![32],
            tasks: Task::BINARY.to_vec(),
            weights: vec![0.4, 0.3, 0.3],
            relevance_classes: 5,
        }
    }
}

impl MmoeConfig {
    pub fn has_relevance(&self) -> bool {
        self.tasks.contains(&Task::Relevance)
    }

    pub fn weight(&self, task: Task) -> Option<f64> {
        self.tasks.iter().position(|&t| t == task).map(|i| self.weights[i])
    }

    /// Adds the relevance task with weight `alpha` (no-op if present).
    pub fn with_relevance(mut self, alpha: f64) -> Self {
        if !self.has_relevance() {
            self.tasks.push(Task::Relevance);
            self.weights.push(alpha);
        }
        self
    }

    pub fn without_relevance(mut self) -> Self {
        if let Some(i) = self.tasks.iter().position(|&t| t == Task::Relevance) {
            self.tasks.remove(i);
            self.weights.remove(i);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one task is required".into()));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if self.tasks[..i].contains(t) {
                return Err(Error::Config(format!("task `{t}` listed twice")));
            }
        }
        if self.weights.len() != self.tasks.len() {
            return Err(Error::Config(format!(
                "{} task weights given for {} tasks",
                self.weights.len(),
                self.tasks.len()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("task weight {w} must be a finite value >= 0")));
        }
        if !self.weights.iter().any(|&w| w > 0.0) {
            return Err(Error::Config("at least one task weight must be positive".into()));
        }
        if self.num_experts <= self.tasks.len() {
            return Err(Error::Config(format!(
                "num_experts ({}) must exceed the number of tasks ({})",
                self.num_experts,
                self.tasks.len()
            )));
        }
        if self.expert_widths.is_empty() {
            return Err(Error::Config("experts need at least one layer".into()));
        }
        if self.has_relevance() && self.relevance_classes < 2 {
            return Err(Error::Config("relevance task needs at least 2 classes".into()));
        }
        Ok(())
    }
}

/// Full architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ModelConfig {
    pub bottom: BottomKind,
    pub matching: MatchingMode,
    pub dcn: DcnConfig,
    pub ftt: FttConfig,
    pub mmoe: MmoeConfig,
    pub text: TextEncoderConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.mmoe.validate()?;
        if self.matching != MatchingMode::Off {
            self.text.validate()?;
        }
        match self.bottom {
            BottomKind::Dcn => {
                if self.dcn.cross_layers == 0 || self.dcn.deep_widths.is_empty() {
                    return Err(Error::Config("DCN needs at least one cross and one deep layer".into()));
                }
            }
            BottomKind::Ftt => {
                let f = &self.ftt;
                if f.heads == 0 || !f.dim.is_multiple_of(f.heads) {
                    return Err(Error::Config(format!(
                        "FT-Transformer dim {} not divisible by {} heads",
                        f.dim, f.heads
                    )));
                }
                if f.out_dim == 0 {
                    return Err(Error::Config("FT-Transformer out_dim must be >= 1".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 256,
            learning_rate: 1e-3,
            patience: 2,
            min_delta: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

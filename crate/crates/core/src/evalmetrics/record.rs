use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One metric value as written to the metrics JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub task: Option<String>,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none", default)]
    pub k: Option<usize>,
    /// `None` when the metric is undefined, e.g. AUC with one class.
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_queries: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_points: Option<usize>,
    pub seed: u64,
}

impl MetricRecord {
    pub fn auc(task: &str, value: Option<f64>, n_points: usize, seed: u64) -> Self {
        Self {
            metric: "auc".into(),
            task: Some(task.into()),
            k: None,
            value,
            n_queries: None,
            n_points: Some(n_points),
            seed,
        }
    }

    pub fn mrr(task: &str, k: usize, value: f64, n_queries: usize, seed: u64) -> Self {
        Self {
            metric: "mrr".into(),
            task: Some(task.into()),
            k: Some(k),
            value: Some(value),
            n_queries: Some(n_queries),
            n_points: None,
            seed,
        }
    }

    pub fn pd(k: usize, value: f64, n_queries: usize, seed: u64) -> Self {
        Self {
            metric: "pd".into(),
            task: None,
            k: Some(k),
            value: Some(value),
            n_queries: Some(n_queries),
            n_points: None,
            seed,
        }
    }
}

pub fn write_metrics(records: &[MetricRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(records)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

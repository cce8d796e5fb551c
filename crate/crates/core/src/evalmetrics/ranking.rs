use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::datamodel::EncodedExample;
use crate::error::{Error, Result};
use crate::networks::{Model, Predictions, Task};

/// What the ranking sorts by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankKey {
    /// One task's predicted probability.
    Task(Task),
    /// `Σ w_t · p_t` over binary tasks.
    Combined(Vec<(Task, f64)>),
}

impl RankKey {
    pub fn scores(&self, predictions: &Predictions) -> Result<Vec<f64>> {
        match self {
            RankKey::Task(t) => Ok(predictions.task(*t)?.to_vec()),
            RankKey::Combined(weights) => {
                let mut out: Option<Vec<f64>> = None;
                for (t, w) in weights {
                    let p = predictions.task(*t)?;
                    let acc = out.get_or_insert_with(|| vec![0.0; p.len()]);
                    for (a, v) in acc.iter_mut().zip(p) {
                        *a += w * v;
                    }
                }
                out.ok_or_else(|| Error::Config("combined ranking needs at least one task".into()))
            }
        }
    }
}

/// One session's products, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub customer_id: String,
    pub items: Vec<(String, f64)>,
}

impl RankedList {
    /// Sorts by score descending, then product id ascending. A product seen
    /// more than once keeps its highest score.
    pub fn new(query_id: impl Into<String>, customer_id: impl Into<String>, scored: Vec<(String, f64)>) -> Result<Self> {
        let mut best: BTreeMap<String, f64> = BTreeMap::new();
        for (p, s) in scored {
            if !s.is_finite() {
                return Err(Error::NonFinite {
                    kernel: format!("ranking score for product `{p}`"),
                });
            }
            best.entry(p).and_modify(|b| *b = b.max(s)).or_insert(s);
        }
        let mut items: Vec<(String, f64)> = best.into_iter().collect();
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self {
            query_id: query_id.into(),
            customer_id: customer_id.into(),
            items,
        })
    }

    pub fn top_k(&self, k: usize) -> impl Iterator<Item = &str> {
        self.items.iter().take(k).map(|(p, _)| p.as_str())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Indices of `examples` grouped by (query, customer) session, in key order.
pub fn group_sessions(examples: &[EncodedExample]) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        groups.entry((&e.query_id, &e.customer_id)).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Ranks one session from precomputed scores aligned with `group`.
pub fn rank_group(group: &[&EncodedExample], scores: &[f64]) -> Result<RankedList> {
    let first = group
        .first()
        .ok_or_else(|| Error::Contract("cannot rank an empty group".into()))?;
    if scores.len() != group.len() {
        return Err(Error::dim("rank_group", format!("{} scores for {} examples", scores.len(), group.len())));
    }
    if let Some(e) = group.iter().find(|e| e.query_id != first.query_id) {
        return Err(Error::Contract(format!(
            "group mixes queries `{}` and `{}`",
            first.query_id, e.query_id
        )));
    }
    RankedList::new(
        first.query_id.clone(),
        first.customer_id.clone(),
        group.iter().zip(scores).map(|(e, &s)| (e.product_id.clone(), s)).collect(),
    )
}

/// Scores a single session with `model` and ranks it.
pub fn rank_products(model: &Model, group: &[&EncodedExample], key: &RankKey) -> Result<RankedList> {
    let scores = key.scores(&model.predict_refs(group)?)?;
    rank_group(group, &scores)
}

/// Ranks every session of `examples` given one score per example.
pub fn rank_all(examples: &[EncodedExample], scores: &[f64]) -> Result<Vec<RankedList>> {
    if scores.len() != examples.len() {
        return Err(Error::dim("rank_all", format!("{} scores for {} examples", scores.len(), examples.len())));
    }
    group_sessions(examples)
        .into_iter()
        .map(|idx| {
            let group: Vec<&EncodedExample> = idx.iter().map(|&i| &examples[i]).collect();
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            rank_group(&group, &s)
        })
        .collect()
}

/// Products with a positive label for `task` in each session, aligned with
/// [`group_sessions`].
pub fn relevant_sets(examples: &[EncodedExample], task: Task) -> Result<Vec<BTreeSet<String>>> {
    let label = |e: &EncodedExample| -> Result<bool> {
        Ok(match task {
            Task::Click => e.labels.click > 0.5,
            Task::Atc => e.labels.atc > 0.5,
            Task::Trx => e.labels.trx > 0.5,
            Task::Relevance => return Err(Error::Config("MRR needs a binary task".into())),
        })
    };
    group_sessions(examples)
        .into_iter()
        .map(|idx| {
            let mut set = BTreeSet::new();
            for i in idx {
                if label(&examples[i])? {
                    set.insert(examples[i].product_id.clone());
                }
            }
            Ok(set)
        })
        .collect()
}

/// Mean over sessions of `1 / rank` of the first relevant product in the top
/// `k`; sessions without one contribute 0.
pub fn mrr_at_k(rankings: &[RankedList], relevant: &[BTreeSet<String>], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if rankings.len() != relevant.len() {
        return Err(Error::dim("mrr_at_k", format!("{} rankings, {} label sets", rankings.len(), relevant.len())));
    }
    if rankings.is_empty() {
        return Err(Error::Data("MRR over zero sessions".into()));
    }
    let total: f64 = rankings
        .iter()
        .zip(relevant)
        .map(|(r, rel)| {
            r.top_k(k)
                .position(|p| rel.contains(p))
                .map_or(0.0, |i| 1.0 / (i + 1) as f64)
        })
        .sum();
    Ok(total / rankings.len() as f64)
}

use std::collections::BTreeSet;

use log::warn;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::ranking::{group_sessions, rank_group};
use crate::datamodel::{EncodedExample, FeatureSchema, UNKNOWN_INDEX};
use crate::error::{Error, Result};
use crate::networks::Task;
use crate::numerics::component_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricParams {
    pub k: usize,
    pub task: Task,
    /// Number of sessions drawn for PD@K.
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            k: 10,
            task: Task::Click,
            sample_size: 500,
            seed: 0,
        }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if self.sample_size < 1 {
            return Err(Error::Config("PD sample size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Copy of `examples` with user-specific continuous features at the
/// standardized zero and user-specific categoricals at the unknown index.
pub fn depersonalize(examples: &[EncodedExample], schema: &FeatureSchema) -> Vec<EncodedExample> {
    let cats: Vec<usize> = (0..schema.categorical.len())
        .filter(|&i| schema.categorical[i].user_specific)
        .collect();
    let nums: Vec<usize> = (0..schema.continuous.len())
        .filter(|&i| schema.continuous[i].user_specific)
        .collect();
    examples
        .iter()
        .map(|e| {
            let mut e = e.clone();
            for &i in &cats {
                e.categorical[i] = UNKNOWN_INDEX;
            }
            for &i in &nums {
                e.continuous[i] = 0.0;
            }
            e
        })
        .collect()
}

/// `|A ∩ B| / min(K, session size)`
pub fn overlap_at_k<'a>(a: impl Iterator<Item = &'a str>, b: impl Iterator<Item = &'a str>, k: usize, size: usize) -> f64 {
    let a: BTreeSet<&str> = a.take(k).collect();
    let hits = b.take(k).filter(|p| a.contains(p)).count();
    hits as f64 / k.min(size).max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdOutcome {
    pub value: f64,
    pub sessions: usize,
}

/// Personalization degree: mean top-K overlap between rankings scored with
/// and without the user-specific features, over a seeded sample of sessions.
///
/// `score` maps examples to one ranking score each.
pub fn pd_at_k(
    score: &dyn Fn(&[EncodedExample]) -> Result<Vec<f64>>,
    examples: &[EncodedExample],
    schema: &FeatureSchema,
    params: &MetricParams,
) -> Result<PdOutcome> {
    params.validate()?;
    let groups = group_sessions(examples);
    if groups.is_empty() {
        return Err(Error::Data("PD@K over an empty test set".into()));
    }
    let take = params.sample_size.min(groups.len());
    let mut rng = component_rng(params.seed, "pd_sample");
    let mut picked: Vec<usize> = index::sample(&mut rng, groups.len(), take).into_vec();
    picked.sort_unstable();
    if schema.user_specific_count() == 0 {
        warn!("schema has no user-specific features; PD@{} is 1 by construction", params.k);
        return Ok(PdOutcome {
            value: 1.0,
            sessions: take,
        });
    }
    let rows: Vec<usize> = picked.iter().flat_map(|&g| groups[g].iter().copied()).collect();
    let test_p: Vec<EncodedExample> = rows.iter().map(|&i| examples[i].clone()).collect();
    let test_m = depersonalize(&test_p, schema);
    let sp = score(&test_p)?;
    let sm = score(&test_m)?;
    if sp.len() != test_p.len() || sm.len() != test_m.len() {
        return Err(Error::dim("pd_at_k", "scorer returned the wrong number of scores"));
    }
    let mut total = 0.0;
    let mut offset = 0;
    for &g in &picked {
        let n = groups[g].len();
        let refs_p: Vec<&EncodedExample> = test_p[offset..offset + n].iter().collect();
        let refs_m: Vec<&EncodedExample> = test_m[offset..offset + n].iter().collect();
        let rp = rank_group(&refs_p, &sp[offset..offset + n])?;
        let rm = rank_group(&refs_m, &sm[offset..offset + n])?;
        total += overlap_at_k(rp.top_k(params.k), rm.top_k(params.k), params.k, rp.len());
        offset += n;
    }
    Ok(PdOutcome {
        value: total / take as f64,
        sessions: take,
    })
}

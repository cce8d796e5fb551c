use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::datamodel::Dataset;
use crate::error::{Error, Result};
use crate::numerics::component_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub bins_per_category: usize,
    /// Overall sampling rate.
    pub beta: f64,
    /// Target fraction of positives within each bin's sample.
    pub alpha_pos: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            bins_per_category: 5,
            beta: 0.2,
            alpha_pos: 0.3,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins_per_category < 1 {
            return Err(Error::Config("bins_per_category must be at least 1".into()));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if !(self.alpha_pos > 0.0 && self.alpha_pos < 1.0) {
            return Err(Error::Config(format!("alpha_pos must lie in (0, 1), got {}", self.alpha_pos)));
        }
        Ok(())
    }
}

/// What one (category, bin) cell asked for and what it got.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinReport {
    pub category: String,
    pub bin: usize,
    pub products: usize,
    pub impressions: usize,
    pub positives: usize,
    pub negatives: usize,
    pub requested: usize,
    pub requested_pos: usize,
    pub requested_neg: usize,
    pub sampled_pos: usize,
    pub sampled_neg: usize,
    pub shortfall_pos: usize,
    pub shortfall_neg: usize,
}

impl BinReport {
    pub fn sampled(&self) -> usize {
        self.sampled_pos + self.sampled_neg
    }

    pub fn shortfall(&self) -> usize {
        self.shortfall_pos + self.shortfall_neg
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub bins: Vec<BinReport>,
    pub skipped_categories: Vec<String>,
}

impl SampleReport {
    pub fn total_sampled(&self) -> usize {
        self.bins.iter().map(BinReport::sampled).sum()
    }

    pub fn total_shortfall(&self) -> usize {
        self.bins.iter().map(BinReport::shortfall).sum()
    }

    /// Checks that every impression landed in exactly one bin and that each
    /// side's request equals what was drawn plus what was missing.
    pub fn reconcile(&self, total_impressions: usize) -> Result<()> {
        let binned: usize = self.bins.iter().map(|b| b.impressions).sum();
        if binned != total_impressions {
            return Err(Error::Data(format!(
                "bins hold {binned} impressions but the input has {total_impressions}"
            )));
        }
        for b in &self.bins {
            let ok = b.positives + b.negatives == b.impressions
                && b.requested_pos + b.requested_neg == b.requested
                && b.sampled_pos + b.shortfall_pos == b.requested_pos
                && b.sampled_neg + b.shortfall_neg == b.requested_neg
                && b.sampled_pos <= b.positives
                && b.sampled_neg <= b.negatives;
            if !ok {
                return Err(Error::Data(format!("bin {}/{} does not reconcile: {b:?}", b.category, b.bin)));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for b in &self.bins {
            w.serialize(b)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Splits products, ranked by impression count (descending, ties by id), into
/// `bins` contiguous rank ranges of equal width. Earlier bins hold the more
/// popular products; when the count does not divide evenly the later bins get
/// the extra product.
pub fn rank_bins(counts: &BTreeMap<&str, usize>, bins: usize) -> Vec<Vec<String>> {
    let mut ranked: Vec<(&str, usize)> = counts.iter().map(|(p, c)| (*p, *c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let n = ranked.len();
    (0..bins)
        .map(|k| {
            ranked[k * n / bins..(k + 1) * n / bins]
                .iter()
                .map(|(p, _)| p.to_string())
                .collect()
        })
        .collect()
}

fn draw(pool: &[usize], want: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    if want >= pool.len() {
        return pool.to_vec();
    }
    index::sample(rng, pool.len(), want).into_iter().map(|i| pool[i]).collect()
}

/// Category- and popularity-stratified subsample with positive/negative
/// balancing. Returned impressions keep their input order.
pub fn stratified_sample(ds: &Dataset, config: &SamplingConfig) -> Result<(Dataset, SampleReport)> {
    config.validate()?;
    let mut by_category: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for cat in ds.products.values().map(|p| p.category.as_str()) {
        by_category.entry(cat).or_default();
    }
    for (i, imp) in ds.impressions.iter().enumerate() {
        let p = ds.product(&imp.product_id)?;
        by_category.entry(&p.category).or_default().push(i);
    }

    let mut report = SampleReport::default();
    let mut keep = Vec::new();
    for (category, rows) in &by_category {
        if rows.is_empty() {
            warn!("category `{category}` has no impressions; skipped");
            report.skipped_categories.push(category.to_string());
            continue;
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for &i in rows {
            *counts.entry(ds.impressions[i].product_id.as_str()).or_default() += 1;
        }
        let bins = rank_bins(&counts, config.bins_per_category);
        let mut bin_of: BTreeMap<&str, usize> = BTreeMap::new();
        for (k, products) in bins.iter().enumerate() {
            for p in products {
                bin_of.insert(counts.get_key_value(p.as_str()).unwrap().0, k);
            }
        }
        let mut pos = vec![Vec::new(); bins.len()];
        let mut neg = vec![Vec::new(); bins.len()];
        for &i in rows {
            let imp = &ds.impressions[i];
            let k = bin_of[imp.product_id.as_str()];
            if imp.is_positive() {
                pos[k].push(i);
            } else {
                neg[k].push(i);
            }
        }
        for (k, products) in bins.iter().enumerate() {
            if products.is_empty() {
                continue;
            }
            let size = pos[k].len() + neg[k].len();
            let requested = (config.beta * size as f64).round() as usize;
            let requested_pos = (config.alpha_pos * requested as f64).round() as usize;
            let requested_neg = requested - requested_pos;
            let mut rng = component_rng(config.seed, &format!("sample/{category}/{k}"));
            let got_pos = draw(&pos[k], requested_pos, &mut rng);
            let got_neg = draw(&neg[k], requested_neg, &mut rng);
            let row = BinReport {
                category: category.to_string(),
                bin: k,
                products: products.len(),
                impressions: size,
                positives: pos[k].len(),
                negatives: neg[k].len(),
                requested,
                requested_pos,
                requested_neg,
                sampled_pos: got_pos.len(),
                sampled_neg: got_neg.len(),
                shortfall_pos: requested_pos - got_pos.len(),
                shortfall_neg: requested_neg - got_neg.len(),
            };
            if row.shortfall() > 0 {
                warn!(
                    "category `{category}` bin {k}: short by {} positive and {} negative impressions",
                    row.shortfall_pos, row.shortfall_neg
                );
            }
            report.bins.push(row);
            keep.extend(got_pos);
            keep.extend(got_neg);
        }
    }
    keep.sort_unstable();
    info!(
        "sampled {} of {} impressions over {} bins (seed {})",
        keep.len(),
        ds.len(),
        report.bins.len(),
        config.seed
    );
    let sampled = ds.with_impressions(keep.into_iter().map(|i| ds.impressions[i].clone()).collect());
    Ok((sampled, report))
}

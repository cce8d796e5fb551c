use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, ImpressionRecord};
use crate::error::{Error, Result};
use crate::textmatch::SemanticScorer;

/// `ln(position + 1)^1.5`
pub fn position_weight(position: u32) -> Result<f64> {
    if position < 1 {
        return Err(Error::Contract(format!("position must be >= 1, got {position}")));
    }
    Ok(f64::from(position).ln_1p().powf(1.5))
}

/// `1 + transactions / clicks`, and 1 when there are no clicks.
pub fn transaction_weight(clicks: u64, transactions: u64) -> f64 {
    if clicks == 0 {
        1.0
    } else {
        1.0 + transactions as f64 / clicks as f64
    }
}

/// How click positions enter the weighted click count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionWeighting {
    /// Every click is weighted at its own position, and every purchase adds
    /// the weight of the click it came from once more.
    #[default]
    PerEvent,
    /// `clicks × position_weight(mean click position) × transaction_weight`
    MeanPosition,
}

/// Counts for one (query, product) pair, pooled over all positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickAggregate {
    pub query_id: String,
    pub product_id: String,
    pub impressions: u64,
    pub clicks: u64,
    pub transactions: u64,
    /// `Σ position_weight(p)` over click events.
    pub click_mass: f64,
    /// `Σ position_weight(p)` over click events that ended in a purchase.
    pub transaction_mass: f64,
    pub click_position_sum: u64,
    pub sem_score: f64,
}

impl ClickAggregate {
    pub fn new(query_id: impl Into<String>, product_id: impl Into<String>, sem_score: f64) -> Self {
        Self {
            query_id: query_id.into(),
            product_id: product_id.into(),
            impressions: 0,
            clicks: 0,
            transactions: 0,
            click_mass: 0.0,
            transaction_mass: 0.0,
            click_position_sum: 0,
            sem_score,
        }
    }

    pub fn add_impression(&mut self) {
        self.impressions += 1;
    }

    pub fn add_click(&mut self, position: u32) -> Result<()> {
        let w = position_weight(position)?;
        self.impressions += 1;
        self.clicks += 1;
        self.click_mass += w;
        self.click_position_sum += u64::from(position);
        Ok(())
    }

    /// Marks one more click at `position` as having ended in a purchase.
    pub fn add_transaction(&mut self, position: u32) -> Result<()> {
        self.transactions += 1;
        self.transaction_mass += position_weight(position)?;
        Ok(())
    }

    /// Folds one impression in. A purchase without a click breaks the label
    /// hierarchy; it is counted as an impression only.
    pub fn add_event(&mut self, imp: &ImpressionRecord) -> Result<bool> {
        if !imp.click {
            self.add_impression();
            return Ok(!imp.trx);
        }
        self.add_click(imp.position)?;
        if imp.trx {
            self.add_transaction(imp.position)?;
        }
        Ok(true)
    }

    pub fn merge(&mut self, other: &ClickAggregate) {
        self.impressions += other.impressions;
        self.clicks += other.clicks;
        self.transactions += other.transactions;
        self.click_mass += other.click_mass;
        self.transaction_mass += other.transaction_mass;
        self.click_position_sum += other.click_position_sum;
    }

    /// Clamps `transactions ≤ clicks ≤ impressions`, returning whether
    /// anything had to change.
    pub fn clamp(&mut self) -> bool {
        let mut changed = false;
        if self.clicks > self.impressions {
            self.clicks = self.impressions;
            changed = true;
        }
        if self.transactions > self.clicks {
            self.transactions = self.clicks;
            self.transaction_mass = self.transaction_mass.min(self.click_mass);
            changed = true;
        }
        changed
    }

    pub fn weighted_clicks(&self, mode: PositionWeighting) -> f64 {
        match mode {
            PositionWeighting::PerEvent => self.click_mass + self.transaction_mass,
            PositionWeighting::MeanPosition => {
                if self.clicks == 0 {
                    return 0.0;
                }
                let mean = self.click_position_sum as f64 / self.clicks as f64;
                self.clicks as f64 * mean.ln_1p().powf(1.5) * transaction_weight(self.clicks, self.transactions)
            }
        }
    }
}

/// Weighted clicks per impression; `None` when there are no impressions.
pub fn weighted_ctr(agg: &ClickAggregate, mode: PositionWeighting) -> Option<f64> {
    (agg.impressions > 0).then(|| agg.weighted_clicks(mode) / agg.impressions as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelevanceConfig {
    /// Weight of the click signal against the semantic score.
    pub alpha_rel: f64,
    pub classes: usize,
    pub weighting: PositionWeighting,
}

impl Default for RelevanceConfig {
    fn default() -> Self {
        Self {
            alpha_rel: 0.5,
            classes: 5,
            weighting: PositionWeighting::PerEvent,
        }
    }
}

impl RelevanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_rel) {
            return Err(Error::Config(format!("alpha_rel must lie in [0, 1], got {}", self.alpha_rel)));
        }
        if self.classes < 2 {
            return Err(Error::Config("relevance needs at least 2 classes".into()));
        }
        Ok(())
    }
}

/// Per-query min-max range of weighted CTR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl MinMax {
    pub fn over(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            min,
            max,
            count: values.len(),
        }
    }

    /// 0.5 when the query has one product or no spread.
    pub fn normalize(&self, v: f64) -> f64 {
        let spread = self.max - self.min;
        if self.count < 2 || spread <= 0.0 {
            0.5
        } else {
            ((v - self.min) / spread).clamp(0.0, 1.0)
        }
    }
}

/// `α·minmax(wctr) + (1−α)·clamp01((sem + 1)/2)`
pub fn relevance_score(wctr: f64, norm: &MinMax, sem_score: f64, alpha_rel: f64) -> f64 {
    let sem = ((sem_score + 1.0) / 2.0).clamp(0.0, 1.0);
    alpha_rel * norm.normalize(wctr) + (1.0 - alpha_rel) * sem
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Classes `0..c` from one query's scores: the class is the number of
/// `j/c` quantile thresholds the score strictly exceeds, so ties go down.
pub fn discretize_labels(scores: &[f64], classes: usize) -> Result<Vec<usize>> {
    if classes < 2 {
        return Err(Error::Contract(format!("need at least 2 classes, got {classes}")));
    }
    if scores.is_empty() {
        return Ok(Vec::new());
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let thresholds: Vec<f64> = (1..classes)
        .map(|j| quantile(&sorted, j as f64 / classes as f64))
        .collect();
    Ok(scores
        .iter()
        .map(|&s| thresholds.iter().filter(|&&t| s > t).count())
        .collect())
}

/// One line of the label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub query_id: String,
    pub product_id: String,
    pub weighted_ctr: f64,
    pub sem_score: f64,
    pub relevance_score: f64,
    pub relevance_class: usize,
}

/// Pools impressions per (query, product) and attaches semantic scores.
pub fn aggregate(ds: &Dataset, scorer: &dyn SemanticScorer) -> Result<Vec<ClickAggregate>> {
    let mut aggs: BTreeMap<(&str, &str), ClickAggregate> = BTreeMap::new();
    let mut broken = 0usize;
    for imp in &ds.impressions {
        let key = (imp.query_id.as_str(), imp.product_id.as_str());
        if let std::collections::btree_map::Entry::Vacant(e) = aggs.entry(key) {
            let sem = scorer.score(&ds.query(key.0)?.text, ds.product(key.1)?);
            e.insert(ClickAggregate::new(key.0, key.1, sem));
        }
        if !aggs.get_mut(&key).unwrap().add_event(imp)? {
            broken += 1;
        }
    }
    if broken > 0 {
        warn!("{broken} impression(s) record a purchase without a click; purchase ignored");
    }
    let mut out: Vec<ClickAggregate> = aggs.into_values().collect();
    let clamped = out.iter_mut().map(ClickAggregate::clamp).filter(|&c| c).count();
    if clamped > 0 {
        warn!("{clamped} aggregate(s) clamped to transactions <= clicks <= impressions");
    }
    Ok(out)
}

/// Scores and discretizes aggregates query by query.
pub fn label_aggregates(aggs: &[ClickAggregate], config: &RelevanceConfig) -> Result<Vec<LabelRecord>> {
    config.validate()?;
    let mut by_query: BTreeMap<&str, Vec<(&ClickAggregate, f64)>> = BTreeMap::new();
    for a in aggs {
        match weighted_ctr(a, config.weighting) {
            Some(w) => by_query.entry(&a.query_id).or_default().push((a, w)),
            None => warn!("({}, {}) has no impressions; excluded from labeling", a.query_id, a.product_id),
        }
    }
    let mut out = Vec::with_capacity(aggs.len());
    for rows in by_query.values() {
        let wctr: Vec<f64> = rows.iter().map(|(_, w)| *w).collect();
        let norm = MinMax::over(&wctr);
        let scores: Vec<f64> = rows
            .iter()
            .map(|(a, w)| relevance_score(*w, &norm, a.sem_score, config.alpha_rel))
            .collect();
        let classes = discretize_labels(&scores, config.classes)?;
        for (((a, w), s), c) in rows.iter().zip(&scores).zip(classes) {
            out.push(LabelRecord {
                query_id: a.query_id.clone(),
                product_id: a.product_id.clone(),
                weighted_ctr: *w,
                sem_score: a.sem_score,
                relevance_score: *s,
                relevance_class: c,
            });
        }
    }
    Ok(out)
}

/// Aggregates, scores and writes `relevance_class` onto every impression.
pub fn label_dataset(
    ds: &Dataset,
    scorer: &dyn SemanticScorer,
    config: &RelevanceConfig,
) -> Result<(Dataset, Vec<LabelRecord>)> {
    let labels = label_aggregates(&aggregate(ds, scorer)?, config)?;
    let lookup: BTreeMap<(&str, &str), usize> = labels
        .iter()
        .map(|l| ((l.query_id.as_str(), l.product_id.as_str()), l.relevance_class))
        .collect();
    let mut out = ds.clone();
    for imp in &mut out.impressions {
        imp.relevance_class = lookup.get(&(imp.query_id.as_str(), imp.product_id.as_str())).copied();
    }
    info!("labeled {} query-product pairs into {} classes", labels.len(), config.classes);
    Ok((out, labels))
}

pub fn write_labels(labels: &[LabelRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for l in labels {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn high_precision_position_weight(p: u32) -> f64 {
        // ln(p + 1) via the atanh series, then x^1.5 = x·sqrt(x) by Newton.
        let x = f64::from(p + 1);
        let y = (x - 1.0) / (x + 1.0);
        let mut ln = 0.0;
        let mut term = y;
        for k in 0..2000 {
            ln += term / (2 * k + 1) as f64;
            term *= y * y;
        }
        ln *= 2.0;
        let mut r = ln;
        for _ in 0..60 {
            r = 0.5 * (r + ln / r);
        }
        ln * r
    }

    #[test]
    fn position_weight_oracle() {
        let w1 = position_weight(1).unwrap();
        let w9 = position_weight(9).unwrap();
        assert!((w1 - 0.5771).abs() < 5e-4);
        assert!((w9 - 3.4941).abs() < 5e-4);
        for p in [1, 2, 9, 50, 100] {
            let want = high_precision_position_weight(p);
            assert!((position_weight(p).unwrap() - want).abs() < 1e-12, "{p}");
        }
        assert!(matches!(position_weight(0), Err(Error::Contract(_))));
    }

    #[test]
    fn position_weight_increases() {
        let w: Vec<f64> = (1..=100).map(|p| position_weight(p).unwrap()).collect();
        assert!(w.windows(2).all(|p| p[1] > p[0]));
    }

    #[test]
    fn transaction_weight_examples() {
        assert_eq!(transaction_weight(4, 1), 1.25);
        assert_eq!(transaction_weight(0, 0), 1.0);
        assert_eq!(transaction_weight(3, 3), 2.0);
    }

    fn worked() -> ClickAggregate {
        let mut a = ClickAggregate::new("q", "p", 0.0);
        a.add_click(1).unwrap();
        a.add_click(1).unwrap();
        a.add_transaction(1).unwrap();
        for _ in 0..8 {
            a.add_impression();
        }
        a
    }

    #[test]
    fn weighted_ctr_worked_example() {
        let a = worked();
        assert_eq!(a.impressions, 10);
        let oracle = 2.0 * 2f64.ln().powf(1.5) * 1.5 / 10.0;
        for mode in [PositionWeighting::PerEvent, PositionWeighting::MeanPosition] {
            let w = weighted_ctr(&a, mode).unwrap();
            assert!((w - 0.17312).abs() < 1e-5, "{mode:?} {w}");
            assert!((w - oracle).abs() < 1e-15);
        }
    }

    #[test]
    fn weighted_ctr_edge_cases() {
        let mut a = ClickAggregate::new("q", "p", 0.0);
        assert_eq!(weighted_ctr(&a, PositionWeighting::PerEvent), None);
        a.add_impression();
        assert_eq!(weighted_ctr(&a, PositionWeighting::PerEvent), Some(0.0));
        let w = weighted_ctr(&worked(), PositionWeighting::PerEvent).unwrap();
        let mut doubled = worked();
        for _ in 0..10 {
            doubled.add_impression();
        }
        assert!((weighted_ctr(&doubled, PositionWeighting::PerEvent).unwrap() - w / 2.0).abs() < 1e-15);
    }

    #[test]
    fn blend_examples() {
        let norm = MinMax::over(&[0.1, 0.3]);
        let s: Vec<f64> = [0.1, 0.3].iter().map(|&w| relevance_score(w, &norm, 0.0, 0.5)).collect();
        assert!((s[0] - 0.25).abs() < 1e-15 && (s[1] - 0.75).abs() < 1e-15);
        assert_eq!(relevance_score(0.3, &norm, -1.0, 1.0), 1.0);
        assert_eq!(relevance_score(0.3, &norm, 0.6, 0.0), 0.8);
        let single = MinMax::over(&[0.4]);
        assert_eq!(relevance_score(0.4, &single, -1.0, 1.0), 0.5);
        let flat = MinMax::over(&[0.2, 0.2, 0.2]);
        assert_eq!(flat.normalize(0.2), 0.5);
    }

    #[test]
    fn discretize_examples() {
        assert_eq!(discretize_labels(&[0.1, 0.9], 2).unwrap(), vec![0, 1]);
        assert_eq!(discretize_labels(&[0.4; 7], 5).unwrap(), vec![0; 7]);
        assert_eq!(discretize_labels(&[0.3], 5).unwrap(), vec![0]);
        let few = discretize_labels(&[0.9, 0.1, 0.5], 5).unwrap();
        assert!(few.iter().all(|&c| c < 5));
        assert!(few[1] < few[2] && few[2] < few[0]);
        assert!(discretize_labels(&[0.1], 1).is_err());
    }

    #[test]
    fn discretize_balances_uniform_scores() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let scores: Vec<f64> = (0..100).map(|_| rng.random()).collect();
            let classes = discretize_labels(&scores, 5).unwrap();
            for c in 0..5 {
                let n = classes.iter().filter(|&&k| k == c).count();
                assert!((19..=21).contains(&n), "class {c}: {n}");
            }
        }
    }

    #[test]
    fn label_file_round_trip() {
        let mut a = worked();
        a.sem_score = 0.2;
        let mut b = ClickAggregate::new("q", "p2", -0.4);
        b.add_impression();
        let labels = label_aggregates(&[a, b], &RelevanceConfig::default()).unwrap();
        assert_eq!(labels.len(), 2);
        assert!(labels[0].relevance_class > labels[1].relevance_class);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        write_labels(&labels, &path).unwrap();
        assert_eq!(read_labels(&path).unwrap(), labels);
    }

    #[test]
    fn clamp_repairs_hierarchy() {
        let mut a = ClickAggregate::new("q", "p", 0.0);
        a.add_click(2).unwrap();
        a.add_transaction(2).unwrap();
        a.add_transaction(3).unwrap();
        assert!(a.clamp());
        assert_eq!(a.transactions, 1);
        assert!(a.transaction_mass <= a.click_mass);
        assert!(!a.clamp());
    }

    #[derive(Debug, Clone)]
    struct Pair {
        impressions: u64,
        clicks: Vec<u32>,
        trx: usize,
        sem: f64,
    }

    fn pair() -> impl Strategy<Value = Pair> {
        (prop::collection::vec(1u32..30, 0..6), 0usize..6, -1.0f64..1.0, 0u64..10).prop_map(
            |(clicks, trx, sem, extra)| Pair {
                impressions: clicks.len() as u64 + extra + 1,
                trx: trx.min(clicks.len()),
                clicks,
                sem,
            },
        )
    }

    fn build(i: usize, p: &Pair) -> ClickAggregate {
        let mut a = ClickAggregate::new("q", format!("p{i}"), p.sem);
        for &c in &p.clicks {
            a.add_click(c).unwrap();
        }
        for &c in &p.clicks[..p.trx] {
            a.add_transaction(c).unwrap();
        }
        while a.impressions < p.impressions {
            a.add_impression();
        }
        a
    }

    fn score_of(aggs: &[ClickAggregate], target: usize, alpha: f64) -> f64 {
        let cfg = RelevanceConfig {
            alpha_rel: alpha,
            ..Default::default()
        };
        label_aggregates(aggs, &cfg).unwrap()[target].relevance_score
    }

    proptest! {
        #[test]
        fn adding_click_or_purchase_never_lowers_score(
            pairs in prop::collection::vec(pair(), 1..6),
            target in 0usize..6,
            pos in 1u32..30,
            alpha in 0.0f64..=1.0,
        ) {
            let target = target % pairs.len();
            let aggs: Vec<ClickAggregate> = pairs.iter().enumerate().map(|(i, p)| build(i, p)).collect();
            let before = score_of(&aggs, target, alpha);

            let mut more = pairs.clone();
            more[target].clicks.push(pos);
            let clicked: Vec<ClickAggregate> = more.iter().enumerate().map(|(i, p)| build(i, p)).collect();
            prop_assert!(score_of(&clicked, target, alpha) >= before - 1e-12);

            if pairs[target].trx < pairs[target].clicks.len() {
                let mut more = pairs.clone();
                more[target].trx += 1;
                let bought: Vec<ClickAggregate> = more.iter().enumerate().map(|(i, p)| build(i, p)).collect();
                prop_assert!(score_of(&bought, target, alpha) >= before - 1e-12);
            }
        }

        #[test]
        fn scores_bounded_and_classes_monotone(pairs in prop::collection::vec(pair(), 1..20), alpha in 0.0f64..=1.0) {
            let aggs: Vec<ClickAggregate> = pairs.iter().enumerate().map(|(i, p)| build(i, p)).collect();
            let cfg = RelevanceConfig { alpha_rel: alpha, ..Default::default() };
            let labels = label_aggregates(&aggs, &cfg).unwrap();
            for a in &labels {
                prop_assert!((0.0..=1.0).contains(&a.relevance_score));
                prop_assert!(a.relevance_class < cfg.classes);
                for b in &labels {
                    if a.relevance_score < b.relevance_score {
                        prop_assert!(a.relevance_class <= b.relevance_class);
                    }
                }
            }
        }
    }
}

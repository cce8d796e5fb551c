use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::records::{CustomerRecord, Dataset, ProductRecord};
use crate::error::{Error, Result};

/// Reserved vocabulary index for unknown or defaulted categories.
pub const UNKNOWN_INDEX: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CategoricalSource {
    ProductCategory,
    ProductBrand,
    ProductColor,
    ProductAgeGroup,
    ProductExtra(String),
    Customer(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum NumericSource {
    ProductPrice,
    ProductRating,
    ProductExtra(String),
    Customer(String),
}

impl CategoricalSource {
    pub fn is_customer(&self) -> bool {
        matches!(self, CategoricalSource::Customer(_))
    }

    fn read<'a>(&self, p: &'a ProductRecord, c: &'a CustomerRecord) -> Option<&'a str> {
        match self {
            CategoricalSource::ProductCategory => Some(&p.category),
            CategoricalSource::ProductBrand => Some(&p.brand),
            CategoricalSource::ProductColor => Some(&p.color),
            CategoricalSource::ProductAgeGroup => Some(&p.age_group),
            CategoricalSource::ProductExtra(k) => p.extra_categorical.get(k).map(String::as_str),
            CategoricalSource::Customer(k) => c.demographics.get(k).map(String::as_str),
        }
    }
}

impl NumericSource {
    pub fn is_customer(&self) -> bool {
        matches!(self, NumericSource::Customer(_))
    }

    fn read(&self, p: &ProductRecord, c: &CustomerRecord) -> Option<f64> {
        match self {
            NumericSource::ProductPrice => Some(p.price),
            NumericSource::ProductRating => Some(p.rating),
            NumericSource::ProductExtra(k) => p.extra_numeric.get(k).copied(),
            NumericSource::Customer(k) => c.history.get(k).copied(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub name: String,
    pub source: CategoricalSource,
    /// Known categories; category `vocab[i]` has index `i + 1`.
    pub vocab: Vec<String>,
    pub embed_dim: usize,
    pub user_specific: bool,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl PartialEq for CategoricalFeature {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.source == other.source
            && self.vocab == other.vocab
            && self.embed_dim == other.embed_dim
            && self.user_specific == other.user_specific
    }
}

impl CategoricalFeature {
    /// `v_i`, including the reserved UNKNOWN slot.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len() + 1
    }

    pub fn index_of(&self, value: &str) -> usize {
        if self.lookup.is_empty() && !self.vocab.is_empty() {
            return self
                .vocab
                .iter()
                .position(|v| v == value)
                .map_or(UNKNOWN_INDEX, |i| i + 1);
        }
        self.lookup.get(value).copied().unwrap_or(UNKNOWN_INDEX)
    }

    fn rebuild_lookup(&mut self) {
        self.lookup = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i + 1))
            .collect();
    }

    pub fn extract(&self, p: &ProductRecord, c: &CustomerRecord) -> usize {
        self.source
            .read(p, c)
            .map_or(UNKNOWN_INDEX, |v| self.index_of(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousFeature {
    pub name: String,
    pub source: NumericSource,
    /// Train-split mean and standard deviation used for z-scoring.
    pub mean: f64,
    pub std: f64,
    pub user_specific: bool,
}

impl ContinuousFeature {
    /// Standardized value; missing raw values map to the mean (0 after scaling).
    pub fn extract(&self, p: &ProductRecord, c: &CustomerRecord) -> f64 {
        self.source
            .read(p, c)
            .map_or(0.0, |raw| (raw - self.mean) / self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InteractionKind {
    /// Historical query–item click-through rate.
    QueryItemCtr,
    /// `|shared tokens| / |query tokens|` between query text and product title.
    TitleOverlap,
    /// Query–document semantic similarity.
    SemanticScore,
}

impl InteractionKind {
    pub fn name(self) -> &'static str {
        match self {
            InteractionKind::QueryItemCtr => "query_item_ctr",
            InteractionKind::TitleOverlap => "title_overlap",
            InteractionKind::SemanticScore => "semantic_score",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSlot {
    pub kind: InteractionKind,
    pub masked: bool,
}

/// Options for [`FeatureSchema::fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaOptions {
    pub embed_dim: usize,
    pub text_dim: usize,
    pub max_categories: usize,
    pub mask_semantic: bool,
}

impl Default for SchemaOptions {
    fn default() -> Self {
        Self {
            embed_dim: 8,
            text_dim: 32,
            max_categories: 1000,
            mask_semantic: false,
        }
    }
}

/// Feature layout shared by encoding, the networks and the PD metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub categorical: Vec<CategoricalFeature>,
    pub continuous: Vec<ContinuousFeature>,
    pub interaction: Vec<InteractionSlot>,
    pub text_dim: usize,
}

impl FeatureSchema {
    /// Derives vocabularies and standardization statistics from `train` only.
    pub fn fit(train: &Dataset, opts: &SchemaOptions) -> Result<Self> {
        if opts.embed_dim == 0 {
            return Err(Error::Config("embedding size must be >= 1".into()));
        }
        let mut cat_sources = vec![
            ("product.category".to_string(), CategoricalSource::ProductCategory),
            ("product.brand".to_string(), CategoricalSource::ProductBrand),
            ("product.color".to_string(), CategoricalSource::ProductColor),
            ("product.age_group".to_string(), CategoricalSource::ProductAgeGroup),
        ];
        let mut num_sources = vec![
            ("product.price".to_string(), NumericSource::ProductPrice),
            ("product.rating".to_string(), NumericSource::ProductRating),
        ];
        let extra_cat: BTreeSet<&String> = train.products.values().flat_map(|p| p.extra_categorical.keys()).collect();
        let extra_num: BTreeSet<&String> = train.products.values().flat_map(|p| p.extra_numeric.keys()).collect();
        let demo: BTreeSet<&String> = train.customers.values().flat_map(|c| c.demographics.keys()).collect();
        let hist: BTreeSet<&String> = train.customers.values().flat_map(|c| c.history.keys()).collect();
        cat_sources.extend(extra_cat.into_iter().map(|k| (format!("product.{k}"), CategoricalSource::ProductExtra(k.clone()))));
        cat_sources.extend(demo.into_iter().map(|k| (format!("customer.{k}"), CategoricalSource::Customer(k.clone()))));
        num_sources.extend(extra_num.into_iter().map(|k| (format!("product.{k}"), NumericSource::ProductExtra(k.clone()))));
        num_sources.extend(hist.into_iter().map(|k| (format!("customer.{k}"), NumericSource::Customer(k.clone()))));

        let empty_customer = CustomerRecord::default();
        let mut rows = Vec::with_capacity(train.impressions.len());
        for imp in &train.impressions {
            let p = train.product(&imp.product_id)?;
            let c = train.customers.get(&imp.customer_id).unwrap_or(&empty_customer);
            rows.push((p, c));
        }

        let mut categorical = Vec::new();
        for (name, source) in cat_sources {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for (p, c) in &rows {
                if let Some(v) = source.read(p, c) {
                    *counts.entry(v).or_default() += 1;
                }
            }
            let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            ranked.truncate(opts.max_categories);
            let mut vocab: Vec<String> = ranked.into_iter().map(|(v, _)| v.to_string()).collect();
            vocab.sort();
            let mut f = CategoricalFeature {
                name,
                user_specific: source.is_customer(),
                source,
                vocab,
                embed_dim: opts.embed_dim,
                lookup: HashMap::new(),
            };
            f.rebuild_lookup();
            categorical.push(f);
        }

        let mut continuous = Vec::new();
        for (name, source) in num_sources {
            let vals: Vec<f64> = rows.iter().filter_map(|(p, c)| source.read(p, c)).collect();
            let (mean, std) = mean_std(&vals);
            continuous.push(ContinuousFeature {
                name,
                user_specific: source.is_customer(),
                source,
                mean,
                std,
            });
        }

        let interaction = [
            InteractionKind::QueryItemCtr,
            InteractionKind::TitleOverlap,
            InteractionKind::SemanticScore,
        ]
        .into_iter()
        .map(|kind| InteractionSlot {
            kind,
            masked: kind == InteractionKind::SemanticScore && opts.mask_semantic,
        })
        .collect();

        let schema = Self {
            categorical,
            continuous,
            interaction,
            text_dim: opts.text_dim,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        let all = self
            .categorical
            .iter()
            .map(|f| f.name.as_str())
            .chain(self.continuous.iter().map(|f| f.name.as_str()))
            .chain(self.interaction.iter().map(|s| s.kind.name()));
        for n in all {
            if !names.insert(n) {
                return Err(Error::Config(format!("feature name `{n}` is not unique")));
            }
        }
        for f in &self.categorical {
            if f.embed_dim == 0 {
                return Err(Error::Config(format!("feature `{}` has embedding size 0", f.name)));
            }
            if f.user_specific && !f.source.is_customer() {
                return Err(Error::Config(format!("`{}` is user-specific but not customer-derived", f.name)));
            }
        }
        for f in &self.continuous {
            if f.user_specific && !f.source.is_customer() {
                return Err(Error::Config(format!("`{}` is user-specific but not customer-derived", f.name)));
            }
            if !(f.std > 0.0) {
                return Err(Error::Config(format!("`{}` has non-positive std", f.name)));
            }
        }
        Ok(())
    }

    /// Restores lookup tables after deserialization.
    pub fn reindex(&mut self) {
        for f in &mut self.categorical {
            f.rebuild_lookup();
        }
    }

    pub fn active_interactions(&self) -> Vec<usize> {
        self.interaction
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.masked)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn set_mask(&mut self, kind: InteractionKind, masked: bool) {
        for s in &mut self.interaction {
            if s.kind == kind {
                s.masked = masked;
            }
        }
    }

    pub fn user_specific_count(&self) -> usize {
        self.categorical.iter().filter(|f| f.user_specific).count()
            + self.continuous.iter().filter(|f| f.user_specific).count()
    }

    /// Stable content hash (hex SHA-256 of the canonical JSON form).
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn mean_std(vals: &[f64]) -> (f64, f64) {
    if vals.is_empty() {
        return (0.0, 1.0);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

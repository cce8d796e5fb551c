//! Seeded click logs with planted preferences.
//!
//! Every product, customer and query carries a latent vector. Products and
//! customers inherit most of theirs from observable attributes (brand, color,
//! segment), so a model that sees those attributes can recover the planted
//! affinities while a popularity ranker cannot.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{save_jsonl, CustomerRecord, Dataset, ImpressionRecord, ProductRecord, QueryRecord};
use crate::error::{Error, Result};
use crate::numerics::component_rng;

const BRANDS: &[&str] = &[
    "acme", "nimbus", "orbit", "vertex", "lumen", "harbor", "summit", "pioneer", "cobalt", "willow",
    "ember", "falcon", "granite", "juniper", "kestrel", "meadow", "quartz", "raven", "sierra", "tundra",
];
const COLORS: &[&str] = &["red", "blue", "green", "black", "white", "grey", "yellow", "pink"];
const CATEGORIES: &[&str] = &[
    "shoes", "jackets", "lamps", "chairs", "backpacks", "watches", "kettles", "blankets", "mugs", "headphones",
];
const ADJECTIVES: &[&str] = &[
    "classic", "modern", "compact", "premium", "light", "sturdy", "soft", "slim", "vintage", "outdoor",
    "travel", "cozy", "bold", "eco", "sport", "deluxe",
];
const AGE_GROUPS: &[&str] = &["kids", "teen", "adult", "senior"];
const SEGMENTS: &[&str] = &["student", "family", "professional", "retired", "athlete", "creative"];

/// Word lists used for titles and query text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldVocabulary {
    pub brands: Vec<String>,
    pub colors: Vec<String>,
    pub categories: Vec<String>,
    pub adjectives: Vec<String>,
}

impl Default for WorldVocabulary {
    fn default() -> Self {
        let own = |w: &[&str]| w.iter().map(|s| s.to_string()).collect();
        Self {
            brands: own(BRANDS),
            colors: own(COLORS),
            categories: own(CATEGORIES),
            adjectives: own(ADJECTIVES),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticWorldConfig {
    pub queries: usize,
    pub products: usize,
    pub customers: usize,
    pub categories: usize,
    pub impressions: usize,
    /// Products shown per session.
    pub list_length: usize,
    /// Fraction of each list drawn from products that share the query's brand
    /// or color; the rest come from the query's whole category.
    pub match_share: f64,
    pub latent_dim: usize,
    /// Examination probability at position `p` is `p^-position_bias`.
    pub position_bias: f64,
    pub click_rate: f64,
    pub atc_rate: f64,
    pub trx_rate: f64,
    /// Scale of the customer-product term in the click logit.
    pub personal_strength: f64,
    /// Scale of the query-title match term.
    pub query_strength: f64,
    /// Scale of the product quality term.
    pub quality_strength: f64,
    pub vocabulary: WorldVocabulary,
    pub seed: u64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self {
            queries: 2000,
            products: 5000,
            customers: 1000,
            categories: 10,
            impressions: 50_000,
            list_length: 20,
            match_share: 0.5,
            latent_dim: 8,
            position_bias: 0.7,
            click_rate: 0.12,
            atc_rate: 0.04,
            trx_rate: 0.015,
            personal_strength: 1.6,
            query_strength: 1.4,
            quality_strength: 0.6,
            vocabulary: WorldVocabulary::default(),
            seed: 0,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("queries", self.queries),
            ("products", self.products),
            ("customers", self.customers),
            ("categories", self.categories),
            ("impressions", self.impressions),
            ("list_length", self.list_length),
            ("latent_dim", self.latent_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synthetic world: {name} must be >= 1")));
        }
        for (name, r) in [("click_rate", self.click_rate), ("atc_rate", self.atc_rate), ("trx_rate", self.trx_rate)] {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!("synthetic world: {name} must lie in (0, 1), got {r}")));
            }
        }
        if self.atc_rate > self.click_rate || self.trx_rate > self.atc_rate {
            return Err(Error::Config("synthetic world: need trx_rate <= atc_rate <= click_rate".into()));
        }
        if !(0.0..=1.0).contains(&self.match_share) {
            return Err(Error::Config("synthetic world: match_share must lie in [0, 1]".into()));
        }
        if !(self.position_bias >= 0.0) {
            return Err(Error::Config("synthetic world: position_bias must be >= 0".into()));
        }
        let v = &self.vocabulary;
        if v.brands.is_empty() || v.colors.is_empty() || v.categories.is_empty() || v.adjectives.len() < 2 {
            return Err(Error::Config(
                "synthetic world: vocabulary needs brands, colors, categories and two adjectives".into(),
            ));
        }
        Ok(())
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Probability of examining position `position`.
pub fn examination(position: u32, bias: f64) -> f64 {
    f64::from(position.max(1)).powf(-bias)
}

/// `sigmoid(logit(base) + affinity) · examination(position)`
pub fn click_probability(affinity: f64, position: u32, config: &SyntheticWorldConfig) -> f64 {
    sigmoid(logit(config.click_rate) + affinity) * examination(position, config.position_bias)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn latent(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    (0..dim).map(|_| n.sample(rng)).collect()
}

fn blend(parts: &[(&[f64], f64)]) -> Vec<f64> {
    let dim = parts[0].0.len();
    let mut out = vec![0.0; dim];
    for (v, w) in parts {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += w * x;
        }
    }
    let norm = dot(&out, &out).sqrt().max(1e-12);
    out.iter().map(|x| x / norm * (dim as f64).sqrt()).collect()
}

struct PlantedProduct {
    latent: Vec<f64>,
    quality: f64,
    brand: usize,
    color: usize,
    age_group: usize,
}

struct PlantedQuery {
    category: usize,
    brand: Option<usize>,
    color: Option<usize>,
}

struct PlantedCustomer {
    latent: Vec<f64>,
    age_group: usize,
}

/// Per-query products ordered by planted, customer-independent affinity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthQuery {
    pub query_id: String,
    pub ranking: Vec<String>,
    pub affinity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLogs {
    pub dataset: Dataset,
    pub ground_truth: Vec<GroundTruthQuery>,
}

impl SyntheticLogs {
    /// Writes `impressions.jsonl` and `ground_truth.jsonl` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        save_jsonl(&self.dataset, dir.join("impressions.jsonl"))?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("ground_truth.jsonl"))?);
        for g in &self.ground_truth {
            serde_json::to_writer(&mut w, g)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

struct World<'a> {
    config: &'a SyntheticWorldConfig,
    products: Vec<PlantedProduct>,
    queries: Vec<PlantedQuery>,
    customers: Vec<PlantedCustomer>,
    by_category: Vec<Vec<usize>>,
}

impl World<'_> {
    fn query_match(&self, q: &PlantedQuery, p: &PlantedProduct) -> f64 {
        let mut m = 0.0;
        if q.brand == Some(p.brand) {
            m += 1.0;
        }
        if q.color == Some(p.color) {
            m += 1.0;
        }
        m
    }

    /// Customer-independent part of the click logit.
    fn base_affinity(&self, q: usize, p: usize) -> f64 {
        let c = self.config;
        let (q, p) = (&self.queries[q], &self.products[p]);
        c.query_strength * self.query_match(q, p) + c.quality_strength * p.quality
    }

    /// `len` distinct products of the query's category, about `match_share` of
    /// them sharing its brand or color, in random display order.
    fn retrieve<R: Rng>(&self, q: usize, len: usize, rng: &mut R) -> Vec<usize> {
        let query = &self.queries[q];
        let pool = &self.by_category[query.category];
        let matching: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|&p| self.query_match(query, &self.products[p]) > 0.0)
            .collect();
        let want = ((len as f64) * self.config.match_share).round() as usize;
        let mut list: Vec<usize> = matching.choose_multiple(rng, want.min(matching.len())).copied().collect();
        let taken: BTreeSet<usize> = list.iter().copied().collect();
        let rest: Vec<usize> = pool.iter().copied().filter(|p| !taken.contains(p)).collect();
        list.extend(rest.choose_multiple(rng, len - list.len()));
        list.shuffle(rng);
        list
    }

    fn affinity(&self, q: usize, u: usize, p: usize) -> f64 {
        let c = self.config;
        let (cu, pp) = (&self.customers[u], &self.products[p]);
        let personal = dot(&cu.latent, &pp.latent) / c.latent_dim as f64;
        let age = if cu.age_group == pp.age_group { 0.5 } else { 0.0 };
        self.base_affinity(q, p) + c.personal_strength * personal + age
    }
}

/// Generates products, customers, queries and sessions from `config.seed`.
pub fn generate_synthetic_logs(config: &SyntheticWorldConfig) -> Result<SyntheticLogs> {
    config.validate()?;
    let v = &config.vocabulary;
    let k = config.latent_dim;
    let seed = config.seed;

    let category_names: Vec<String> = (0..config.categories)
        .map(|i| {
            let base = &v.categories[i % v.categories.len()];
            if i < v.categories.len() {
                base.clone()
            } else {
                format!("{base}{}", i / v.categories.len())
            }
        })
        .collect();

    let mut rng = component_rng(seed, "world/attributes");
    let brand_latent: Vec<Vec<f64>> = (0..v.brands.len()).map(|_| latent(&mut rng, k)).collect();
    let color_latent: Vec<Vec<f64>> = (0..v.colors.len()).map(|_| latent(&mut rng, k)).collect();
    let segment_latent: Vec<Vec<f64>> = (0..SEGMENTS.len()).map(|_| latent(&mut rng, k)).collect();

    let mut rng = component_rng(seed, "world/products");
    let price_dist: LogNormal<f64> = LogNormal::new(3.5, 0.6).expect("valid lognormal");
    let noise = Normal::new(0.0, 0.4).expect("valid normal");
    let mut products = Vec::with_capacity(config.products);
    let mut product_records = BTreeMap::new();
    let mut by_category = vec![Vec::new(); config.categories];
    for i in 0..config.products {
        let category = i % config.categories;
        let brand = rng.random_range(0..v.brands.len());
        let color = rng.random_range(0..v.colors.len());
        let age_group = rng.random_range(0..AGE_GROUPS.len());
        let own = latent(&mut rng, k);
        let z = blend(&[(&brand_latent[brand], 1.0), (&color_latent[color], 0.8), (&own, 0.5)]);
        let quality: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng);
        let rating = (3.2 + 0.8 * quality + noise.sample(&mut rng)).clamp(1.0, 5.0);
        let price = (price_dist.sample(&mut rng) * 100.0).round() / 100.0;
        let adjs: Vec<&String> = v.adjectives.choose_multiple(&mut rng, 2).collect();
        let id = format!("p{i:05}");
        let title = format!(
            "{} {} {} {} {}",
            v.brands[brand], adjs[0], v.colors[color], adjs[1], category_names[category]
        );
        product_records.insert(
            id.clone(),
            ProductRecord {
                id,
                title,
                brand: v.brands[brand].clone(),
                color: v.colors[color].clone(),
                age_group: AGE_GROUPS[age_group].into(),
                category: category_names[category].clone(),
                price,
                rating: (rating * 10.0).round() / 10.0,
                extra_categorical: BTreeMap::new(),
                extra_numeric: BTreeMap::new(),
            },
        );
        by_category[category].push(i);
        products.push(PlantedProduct {
            latent: z,
            quality,
            brand,
            color,
            age_group,
        });
    }

    let mut rng = component_rng(seed, "world/customers");
    let mut customers = Vec::with_capacity(config.customers);
    let mut customer_records = BTreeMap::new();
    for i in 0..config.customers {
        let segment = rng.random_range(0..SEGMENTS.len());
        let age_group = rng.random_range(0..AGE_GROUPS.len());
        let own = latent(&mut rng, k);
        let z = blend(&[(&segment_latent[segment], 1.0), (&own, 0.4)]);
        let id = format!("u{i:05}");
        let spend = (price_dist.sample(&mut rng) * 100.0).round() / 100.0;
        let activity = f64::from(rng.random_range(0u32..40));
        customer_records.insert(
            id.clone(),
            CustomerRecord {
                id,
                demographics: [
                    ("segment".to_string(), SEGMENTS[segment].to_string()),
                    ("age_group".to_string(), AGE_GROUPS[age_group].to_string()),
                ]
                .into_iter()
                .collect(),
                history: [("avg_spend".to_string(), spend), ("sessions_30d".to_string(), activity)]
                    .into_iter()
                    .collect(),
            },
        );
        customers.push(PlantedCustomer { latent: z, age_group });
    }

    let mut rng = component_rng(seed, "world/queries");
    let mut queries = Vec::with_capacity(config.queries);
    let mut query_records = BTreeMap::new();
    for i in 0..config.queries {
        let category = rng.random_range(0..config.categories);
        let (brand, color) = match rng.random_range(0..3) {
            0 => (Some(rng.random_range(0..v.brands.len())), None),
            1 => (None, Some(rng.random_range(0..v.colors.len()))),
            _ => (
                Some(rng.random_range(0..v.brands.len())),
                Some(rng.random_range(0..v.colors.len())),
            ),
        };
        let mut text = Vec::new();
        if let Some(c) = color {
            text.push(v.colors[c].as_str());
        }
        if let Some(b) = brand {
            text.push(v.brands[b].as_str());
        }
        text.push(&category_names[category]);
        let id = format!("q{i:05}");
        query_records.insert(
            id.clone(),
            QueryRecord {
                id,
                text: text.join(" "),
            },
        );
        queries.push(PlantedQuery { category, brand, color });
    }

    let world = World {
        config,
        products,
        queries,
        customers,
        by_category,
    };

    let mut rng = component_rng(seed, "world/sessions");
    let mut impressions = Vec::with_capacity(config.impressions);
    let mut shown: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let atc_given_click = config.atc_rate / config.click_rate;
    let trx_given_atc = config.trx_rate / config.atc_rate;
    while impressions.len() < config.impressions {
        let q = rng.random_range(0..config.queries);
        let u = rng.random_range(0..config.customers);
        let pool = &world.by_category[world.queries[q].category];
        if pool.is_empty() {
            continue;
        }
        let len = config.list_length.min(pool.len()).min(config.impressions - impressions.len());
        let list = world.retrieve(q, len, &mut rng);
        shown.entry(q).or_default().extend(&list);
        for (slot, &p) in list.iter().enumerate() {
            let position = slot as u32 + 1;
            let a = world.affinity(q, u, p);
            let click = rng.random_bool(click_probability(a, position, config));
            let atc = click && rng.random_bool(sigmoid(logit(atc_given_click) + 0.5 * a));
            let trx = atc && rng.random_bool(sigmoid(logit(trx_given_atc) + 0.5 * a));
            impressions.push(ImpressionRecord {
                query_id: format!("q{q:05}"),
                product_id: format!("p{p:05}"),
                customer_id: format!("u{u:05}"),
                position,
                click,
                atc,
                trx,
                relevance_class: None,
            });
        }
    }

    let ground_truth = shown
        .into_iter()
        .map(|(q, mut ps)| {
            ps.sort_unstable();
            ps.dedup();
            let mut scored: Vec<(usize, f64)> = ps.iter().map(|&p| (p, world.base_affinity(q, p))).collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            GroundTruthQuery {
                query_id: format!("q{q:05}"),
                ranking: scored.iter().map(|(p, _)| format!("p{p:05}")).collect(),
                affinity: scored.iter().map(|(_, a)| *a).collect(),
            }
        })
        .collect();

    let mut dataset = Dataset {
        queries: query_records,
        products: product_records,
        customers: customer_records,
        impressions,
    };
    // JSONL only carries referenced records, so prune to match a reload
    let (mut qs, mut ps, mut us) = (BTreeSet::new(), BTreeSet::new(), BTreeSet::new());
    for i in &dataset.impressions {
        qs.insert(i.query_id.clone());
        ps.insert(i.product_id.clone());
        us.insert(i.customer_id.clone());
    }
    dataset.queries.retain(|k, _| qs.contains(k));
    dataset.products.retain(|k, _| ps.contains(k));
    dataset.customers.retain(|k, _| us.contains(k));
    Ok(SyntheticLogs { dataset, ground_truth })
}

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::records::{CustomerRecord, Dataset, ImpressionRecord, ProductRecord, QueryRecord};
use super::schema::{FeatureSchema, InteractionKind};
use crate::error::Result;
use crate::textmatch::{product_document, words, SemanticScorer, Vocabulary};

/// Network-ready form of one impression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub query_id: String,
    pub product_id: String,
    pub customer_id: String,
    pub categorical: Vec<usize>,
    pub continuous: Vec<f64>,
    /// One value per schema interaction slot; masked slots hold 0.
    pub interaction: Vec<f64>,
    pub query_tokens: Vec<u32>,
    pub doc_tokens: Vec<u32>,
    pub labels: Labels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub click: f64,
    pub atc: f64,
    pub trx: f64,
    pub relevance: Option<usize>,
}

impl Labels {
    pub fn from_impression(imp: &ImpressionRecord) -> Self {
        let b = |v: bool| if v { 1.0 } else { 0.0 };
        Self {
            click: b(imp.click),
            atc: b(imp.atc),
            trx: b(imp.trx),
            relevance: imp.relevance_class,
        }
    }
}

/// Source of historical query–item click-through rates.
pub trait CtrLookup {
    fn ctr(&self, query_id: &str, product_id: &str) -> f64;

    /// CTR with one impression (clicked or not) removed from the counts.
    fn ctr_excluding(&self, query_id: &str, product_id: &str, clicked: bool) -> f64 {
        let _ = clicked;
        self.ctr(query_id, product_id)
    }
}

/// No history: every pair is cold.
pub struct NoCtr;

impl CtrLookup for NoCtr {
    fn ctr(&self, _: &str, _: &str) -> f64 {
        0.0
    }
}

/// Impression and click counts per (query, product), from one data split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CtrTable {
    counts: HashMap<String, HashMap<String, (u64, u64)>>,
}

impl CtrTable {
    pub fn from_impressions<'a>(impressions: impl IntoIterator<Item = &'a ImpressionRecord>) -> Self {
        let mut counts: HashMap<String, HashMap<String, (u64, u64)>> = HashMap::new();
        for imp in impressions {
            let e = counts
                .entry(imp.query_id.clone())
                .or_default()
                .entry(imp.product_id.clone())
                .or_default();
            e.0 += 1;
            e.1 += imp.click as u64;
        }
        Self { counts }
    }

    pub fn counts(&self, query_id: &str, product_id: &str) -> (u64, u64) {
        self.counts
            .get(query_id)
            .and_then(|m| m.get(product_id))
            .copied()
            .unwrap_or((0, 0))
    }
}

impl CtrLookup for CtrTable {
    fn ctr(&self, query_id: &str, product_id: &str) -> f64 {
        match self.counts(query_id, product_id) {
            (0, _) => 0.0,
            (n, c) => c as f64 / n as f64,
        }
    }

    fn ctr_excluding(&self, query_id: &str, product_id: &str, clicked: bool) -> f64 {
        let (n, c) = self.counts(query_id, product_id);
        let n = n.saturating_sub(1);
        let c = c.saturating_sub(clicked as u64);
        if n == 0 {
            0.0
        } else {
            c as f64 / n as f64
        }
    }
}

/// `|shared tokens| / |query tokens|` over distinct lowercase word tokens.
pub fn title_overlap(query: &str, title: &str) -> f64 {
    let q: BTreeSet<String> = words(query).collect();
    if q.is_empty() {
        return 0.0;
    }
    let t: BTreeSet<String> = words(title).collect();
    q.intersection(&t).count() as f64 / q.len() as f64
}

/// Interaction vector in schema slot order. Masked slots are 0.
pub fn build_interaction_features(
    schema: &FeatureSchema,
    query: &QueryRecord,
    product: &ProductRecord,
    ctr: f64,
    scorer: &dyn SemanticScorer,
) -> Vec<f64> {
    interactions_with(schema, query, product, ctr, &mut || scorer.score(&query.text, product))
}

fn interactions_with(
    schema: &FeatureSchema,
    query: &QueryRecord,
    product: &ProductRecord,
    ctr: f64,
    semantic: &mut dyn FnMut() -> f64,
) -> Vec<f64> {
    schema
        .interaction
        .iter()
        .map(|slot| {
            if slot.masked {
                return 0.0;
            }
            match slot.kind {
                InteractionKind::QueryItemCtr => ctr,
                InteractionKind::TitleOverlap => title_overlap(&query.text, &product.title),
                InteractionKind::SemanticScore => semantic(),
            }
        })
        .collect()
}

/// Everything encoding needs besides the impression itself.
pub struct Encoder<'a> {
    pub schema: &'a FeatureSchema,
    pub vocab: &'a Vocabulary,
    pub ctr: &'a dyn CtrLookup,
    pub scorer: &'a dyn SemanticScorer,
    pub max_len: usize,
    /// Exclude the impression's own click from its CTR feature (train split).
    pub leave_one_out: bool,
}

impl Encoder<'_> {
    pub fn encode(&self, ds: &Dataset, imp: &ImpressionRecord) -> Result<EncodedExample> {
        let query = ds.query(&imp.query_id)?;
        let product = ds.product(&imp.product_id)?;
        let customer = ds.customer(&imp.customer_id)?;
        let mut sem = || self.scorer.score(&query.text, product);
        Ok(self.encode_parts(imp, query, product, customer, &mut sem))
    }

    fn encode_parts(
        &self,
        imp: &ImpressionRecord,
        query: &QueryRecord,
        product: &ProductRecord,
        customer: &CustomerRecord,
        semantic: &mut dyn FnMut() -> f64,
    ) -> EncodedExample {
        let ctr = if self.leave_one_out {
            self.ctr.ctr_excluding(&imp.query_id, &imp.product_id, imp.click)
        } else {
            self.ctr.ctr(&imp.query_id, &imp.product_id)
        };
        EncodedExample {
            query_id: imp.query_id.clone(),
            product_id: imp.product_id.clone(),
            customer_id: imp.customer_id.clone(),
            categorical: self
                .schema
                .categorical
                .iter()
                .map(|f| f.extract(product, customer))
                .collect(),
            continuous: self
                .schema
                .continuous
                .iter()
                .map(|f| f.extract(product, customer))
                .collect(),
            interaction: interactions_with(self.schema, query, product, ctr, semantic),
            query_tokens: self.vocab.tokenize(&query.text, self.max_len).0,
            doc_tokens: self.vocab.tokenize(&product_document(product), self.max_len).0,
            labels: Labels::from_impression(imp),
        }
    }

    /// Encodes every impression of `ds`, in order. Semantic scores are
    /// computed once per distinct (query, product) pair.
    pub fn encode_all(&self, ds: &Dataset) -> Result<Vec<EncodedExample>> {
        let mut sem_cache: HashMap<(&str, &str), f64> = HashMap::new();
        let mut out = Vec::with_capacity(ds.impressions.len());
        for imp in &ds.impressions {
            let query = ds.query(&imp.query_id)?;
            let product = ds.product(&imp.product_id)?;
            let customer = ds.customer(&imp.customer_id)?;
            let key = (imp.query_id.as_str(), imp.product_id.as_str());
            let mut sem = || {
                *sem_cache
                    .entry(key)
                    .or_insert_with(|| self.scorer.score(&query.text, product))
            };
            out.push(self.encode_parts(imp, query, product, customer, &mut sem));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::schema::SchemaOptions;
    use crate::textmatch::HashNgramScorer;
    use std::collections::BTreeMap;

    fn dataset() -> Dataset {
        let mut ds = Dataset::default();
        ds.queries.insert(
            "q1".into(),
            QueryRecord {
                id: "q1".into(),
                text: "red shoes".into(),
            },
        );
        for (id, title, price) in [("p1", "red running shoes", 10.0), ("p2", "blue mug", 30.0)] {
            ds.products.insert(
                id.into(),
                ProductRecord {
                    id: id.into(),
                    title: title.into(),
                    brand: "acme".into(),
                    color: "red".into(),
                    age_group: "adult".into(),
                    category: "c1".into(),
                    price,
                    rating: 4.0,
                    extra_categorical: BTreeMap::new(),
                    extra_numeric: BTreeMap::new(),
                },
            );
        }
        let mut c = CustomerRecord {
            id: "u1".into(),
            ..Default::default()
        };
        c.demographics.insert("segment".into(), "s1".into());
        c.history.insert("past_clicks".into(), 3.0);
        ds.customers.insert("u1".into(), c);
        for (p, pos, click) in [("p1", 1, true), ("p2", 2, false), ("p1", 1, false)] {
            ds.impressions.push(ImpressionRecord {
                query_id: "q1".into(),
                product_id: p.into(),
                customer_id: "u1".into(),
                position: pos,
                click,
                atc: false,
                trx: false,
                relevance_class: None,
            });
        }
        ds
    }

    fn parts(ds: &Dataset) -> (FeatureSchema, Vocabulary, CtrTable) {
        let schema = FeatureSchema::fit(ds, &SchemaOptions::default()).unwrap();
        let vocab = Vocabulary::build(ds.queries.values().map(|q| q.text.as_str()), 100);
        let ctr = CtrTable::from_impressions(&ds.impressions);
        (schema, vocab, ctr)
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(title_overlap("red shoes", "red running shoes"), 1.0);
        assert_eq!(title_overlap("red shoes", "blue mug"), 0.0);
        assert_eq!(title_overlap("red shoes", "Red mug"), 0.5);
        assert_eq!(title_overlap("", "anything"), 0.0);
    }

    #[test]
    fn ctr_table_and_cold_start() {
        let ds = dataset();
        let t = CtrTable::from_impressions(&ds.impressions);
        assert_eq!(t.ctr("q1", "p1"), 0.5);
        assert_eq!(t.ctr("q1", "zzz"), 0.0);
        assert_eq!(t.ctr_excluding("q1", "p1", true), 0.0);
        assert_eq!(t.ctr_excluding("q1", "p1", false), 1.0);
        assert_eq!(t.ctr_excluding("q1", "p2", false), 0.0);
    }

    #[test]
    fn shapes_determinism_and_standardization() {
        let ds = dataset();
        let (schema, vocab, ctr) = parts(&ds);
        let scorer = HashNgramScorer::default();
        let enc = Encoder {
            schema: &schema,
            vocab: &vocab,
            ctr: &ctr,
            scorer: &scorer,
            max_len: 32,
            leave_one_out: false,
        };
        let a = enc.encode(&ds, &ds.impressions[0]).unwrap();
        let b = enc.encode(&ds, &ds.impressions[0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.categorical.len(), schema.categorical.len());
        assert_eq!(a.continuous.len(), schema.continuous.len());
        assert_eq!(a.interaction.len(), 3);
        assert!(a
            .categorical
            .iter()
            .zip(&schema.categorical)
            .all(|(&i, f)| i < f.vocab_size()));
        // customer past_clicks is constant in train, so it sits at its mean
        let k = schema
            .continuous
            .iter()
            .position(|f| f.name == "customer.past_clicks")
            .unwrap();
        assert_eq!(a.continuous[k], 0.0);
        assert_eq!(a.interaction[0], 0.5);
        assert_eq!(a.interaction[1], 1.0);
        assert!(a.interaction[2] > 0.0);
        assert_eq!(a.query_tokens, vec![vocab.id("red"), vocab.id("shoes")]);
    }

    #[test]
    fn batch_encoding_matches_single() {
        let ds = dataset();
        let (schema, vocab, ctr) = parts(&ds);
        let scorer = HashNgramScorer::default();
        let enc = Encoder {
            schema: &schema,
            vocab: &vocab,
            ctr: &ctr,
            scorer: &scorer,
            max_len: 32,
            leave_one_out: true,
        };
        let all = enc.encode_all(&ds).unwrap();
        for (imp, ex) in ds.impressions.iter().zip(&all) {
            assert_eq!(&enc.encode(&ds, imp).unwrap(), ex);
        }
    }

    #[test]
    fn masked_semantic_slot_is_zero() {
        let ds = dataset();
        let (mut schema, vocab, ctr) = parts(&ds);
        schema.set_mask(InteractionKind::SemanticScore, true);
        assert_eq!(schema.active_interactions(), vec![0, 1]);
        let scorer = HashNgramScorer::default();
        let enc = Encoder {
            schema: &schema,
            vocab: &vocab,
            ctr: &ctr,
            scorer: &scorer,
            max_len: 32,
            leave_one_out: false,
        };
        assert_eq!(enc.encode(&ds, &ds.impressions[0]).unwrap().interaction[2], 0.0);
        assert_eq!(enc.encode_all(&ds).unwrap()[0].interaction[2], 0.0);
    }

    #[test]
    fn unknown_category_and_dangling_id() {
        let mut ds = dataset();
        let (schema, vocab, ctr) = parts(&ds);
        ds.products.get_mut("p1").unwrap().brand = "never-seen".into();
        let scorer = HashNgramScorer::default();
        let enc = Encoder {
            schema: &schema,
            vocab: &vocab,
            ctr: &ctr,
            scorer: &scorer,
            max_len: 32,
            leave_one_out: false,
        };
        let ex = enc.encode(&ds, &ds.impressions[0]).unwrap();
        let k = schema.categorical.iter().position(|f| f.name == "product.brand").unwrap();
        assert_eq!(ex.categorical[k], 0);
        let mut bad = ds.impressions[0].clone();
        bad.product_id = "ghost".into();
        let err = enc.encode(&ds, &bad).unwrap_err();
        assert!(err.to_string().contains("ghost"));
        assert_eq!(err.exit_code(), 2);
    }
}

//! Query–document semantic similarity.
//!
//! The default scorer embeds both strings as L2-normalized hashed counts of
//! character n-grams and returns their cosine. It is a deterministic stand-in
//! for a learned sentence-embedding model.

use serde::{Deserialize, Serialize};

use crate::datamodel::ProductRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScorerVariant {
    #[default]
    HashNgram,
    EncoderCosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticScorerConfig {
    pub variant: ScorerVariant,
    pub ngram: usize,
    pub hash_dim: usize,
}

impl Default for SemanticScorerConfig {
    fn default() -> Self {
        Self {
            variant: ScorerVariant::HashNgram,
            ngram: 3,
            hash_dim: 256,
        }
    }
}

impl SemanticScorerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hash_dim < 16 {
            return Err(Error::Config(format!("hash_dim must be >= 16, got {}", self.hash_dim)));
        }
        if self.ngram == 0 {
            return Err(Error::Config("ngram size must be >= 1".into()));
        }
        Ok(())
    }
}

/// "title brand color age_group" joined by single spaces.
pub fn product_document(p: &ProductRecord) -> String {
    [&p.title, &p.brand, &p.color, &p.age_group]
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Hashed character n-gram counts of the normalized text, L2-normalized.
/// Empty text yields the zero vector.
pub fn hash_embedding(text: &str, ngram: usize, dim: usize) -> Vec<f64> {
    let norm: String = text
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    let chars: Vec<char> = norm.chars().collect();
    let mut v = vec![0.0; dim];
    if chars.is_empty() {
        return v;
    }
    let n = ngram.min(chars.len());
    for w in chars.windows(n) {
        let s: String = w.iter().collect();
        v[(fnv1a(s.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= len;
    }
    v
}

/// Cosine of two vectors; 0 when either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Similarity between a query and a product document, in `[−1, 1]`.
pub trait SemanticScorer: Send + Sync {
    fn score_text(&self, query: &str, document: &str) -> f64;

    fn score(&self, query: &str, product: &ProductRecord) -> f64 {
        self.score_text(query, &product_document(product))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashNgramScorer {
    pub ngram: usize,
    pub hash_dim: usize,
}

impl HashNgramScorer {
    pub fn new(config: &SemanticScorerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            ngram: config.ngram,
            hash_dim: config.hash_dim,
        })
    }
}

impl Default for HashNgramScorer {
    fn default() -> Self {
        Self::new(&SemanticScorerConfig::default()).expect("default config is valid")
    }
}

impl SemanticScorer for HashNgramScorer {
    fn score_text(&self, query: &str, document: &str) -> f64 {
        cosine(
            &hash_embedding(query, self.ngram, self.hash_dim),
            &hash_embedding(document, self.ngram, self.hash_dim),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn product(title: &str, brand: &str, color: &str) -> ProductRecord {
        ProductRecord {
            id: "p".into(),
            title: title.into(),
            brand: brand.into(),
            color: color.into(),
            age_group: "adult".into(),
            category: "c".into(),
            price: 1.0,
            rating: 4.0,
            extra_categorical: Default::default(),
            extra_numeric: Default::default(),
        }
    }

    fn grams(s: &str, n: usize) -> HashSet<String> {
        let c: Vec<char> = s.chars().collect();
        c.windows(n).map(|w| w.iter().collect()).collect()
    }

    #[test]
    fn self_similarity_is_one() {
        let s = HashNgramScorer::default();
        for text in ["red shoes", "a", "Blue Ceramic Mug 350ml"] {
            assert!((s.score_text(text, text) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_ngrams_score_zero_or_collide() {
        let s = HashNgramScorer::default();
        let (a, b) = ("abc", "xyz");
        assert!(grams(a, 3).is_disjoint(&grams(b, 3)));
        // only a hash collision could make this nonzero
        let ea = hash_embedding(a, 3, 256);
        let eb = hash_embedding(b, 3, 256);
        let shared = ea.iter().zip(&eb).any(|(x, y)| *x > 0.0 && *y > 0.0);
        assert_eq!(s.score_text(a, b) == 0.0, !shared);
        assert_eq!(s.score_text("", ""), 0.0);
        assert_eq!(s.score_text("", "abc"), 0.0);
    }

    #[test]
    fn related_document_outscores_unrelated() {
        let s = HashNgramScorer::default();
        let good = product("red running shoes", "acme", "red");
        let bad = product("blue ceramic mug", "potters", "blue");
        assert!(s.score("red shoes", &good) > s.score("red shoes", &bad));
    }

    #[test]
    fn document_joins_fields() {
        let p = product("red running shoes", "acme", "red");
        assert_eq!(product_document(&p), "red running shoes acme red adult");
    }

    #[test]
    fn config_validation() {
        let bad = SemanticScorerConfig {
            hash_dim: 8,
            ..Default::default()
        };
        assert!(HashNgramScorer::new(&bad).is_err());
    }
}

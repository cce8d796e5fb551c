use rand::Rng;
use serde::{Deserialize, Serialize};

use super::semantic::{cosine, SemanticScorer};
use super::vocab::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use crate::networks::layers::TransformerBlock;
use crate::numerics::{normal_init, Graph, ParamId, ParamStore, Var, EMBEDDING_INIT_STD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextEncoderConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    /// Number of topmost blocks that receive gradient. The token and position
    /// tables train only when every block does.
    pub trainable_layers: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            dim: 32,
            heads: 2,
            ff_dim: 64,
            max_len: 32,
            trainable_layers: 1,
        }
    }
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "text encoder dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.trainable_layers > self.layers {
            return Err(Error::Config(format!(
                "trainable_layers {} exceeds layers {}",
                self.trainable_layers, self.layers
            )));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// Small transformer text encoder followed by max pooling over tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEncoder {
    pub config: TextEncoderConfig,
    pub token_table: ParamId,
    pub position_table: ParamId,
    pub blocks: Vec<TransformerBlock>,
}

impl TextEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        config: &TextEncoderConfig,
        vocab_size: usize,
    ) -> Result<Self> {
        config.validate()?;
        let token_table = store.add(
            format!("{name}.tokens"),
            normal_init(rng, &[vocab_size, config.dim], EMBEDDING_INIT_STD),
        )?;
        let position_table = store.add(
            format!("{name}.positions"),
            normal_init(rng, &[config.max_len, config.dim], EMBEDDING_INIT_STD),
        )?;
        let mut blocks = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            blocks.push(TransformerBlock::new(
                store,
                rng,
                &format!("{name}.block{i}"),
                config.dim,
                config.heads,
                config.ff_dim,
            )?);
        }
        let enc = Self {
            config: config.clone(),
            token_table,
            position_table,
            blocks,
        };
        enc.apply_freezing(store);
        Ok(enc)
    }

    /// Marks the bottom `layers − trainable_layers` blocks (and the embedding
    /// tables unless every block trains) as frozen.
    pub fn apply_freezing(&self, store: &mut ParamStore) {
        let frozen_blocks = self.config.layers - self.config.trainable_layers;
        let tables_train = self.config.trainable_layers == self.config.layers;
        store.set_trainable(self.token_table, tables_train);
        store.set_trainable(self.position_table, tables_train);
        for (i, b) in self.blocks.iter().enumerate() {
            for p in b.params() {
                store.set_trainable(p, i >= frozen_blocks);
            }
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.token_table, self.position_table];
        for b in &self.blocks {
            p.extend(b.params());
        }
        p
    }

    /// Encodes several token sequences at once; returns an `n × dim` matrix
    /// with one pooled row per sequence. Empty sequences encode a lone PAD.
    pub fn encode(&self, g: &Graph, store: &ParamStore, seqs: &[&[u32]]) -> Result<Var> {
        if seqs.is_empty() {
            return Err(Error::dim("encode_text", "no sequences"));
        }
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut segments = Vec::with_capacity(seqs.len());
        let vocab_size = store.get(self.token_table).rows();
        for s in seqs {
            let s: &[u32] = if s.is_empty() { &[PAD_ID] } else { s };
            let s = &s[..s.len().min(self.config.max_len)];
            for (pos, &t) in s.iter().enumerate() {
                let t = t as usize;
                if t >= vocab_size {
                    return Err(Error::Index {
                        what: "token table",
                        index: t,
                        size: vocab_size,
                    });
                }
                ids.push(t);
                positions.push(pos);
            }
            segments.push(s.len());
        }
        let tok = g.gather_rows(g.param(store, self.token_table), &ids)?;
        let pos = g.gather_rows(g.param(store, self.position_table), &positions)?;
        let mut h = g.add(tok, pos)?;
        for b in &self.blocks {
            h = b.forward(g, store, h, &segments)?;
        }
        g.segment_max_pool(h, &segments)
    }

    /// Single-sequence convenience returning a `1 × dim` row.
    pub fn encode_one(&self, g: &Graph, store: &ParamStore, seq: &[u32]) -> Result<Var> {
        self.encode(g, store, &[seq])
    }
}

/// Cosine between pooled encoder outputs, using a frozen parameter snapshot.
#[derive(Debug, Clone)]
pub struct EncoderCosineScorer {
    pub encoder: TextEncoder,
    pub store: ParamStore,
    pub vocab: Vocabulary,
}

impl SemanticScorer for EncoderCosineScorer {
    fn score_text(&self, query: &str, document: &str) -> f64 {
        let (q, _) = self.vocab.tokenize(query, self.encoder.config.max_len);
        let (d, _) = self.vocab.tokenize(document, self.encoder.config.max_len);
        if q.is_empty() || d.is_empty() {
            return 0.0;
        }
        let g = Graph::inference();
        match self.encoder.encode(&g, &self.store, &[&q, &d]) {
            Ok(v) => {
                let t = g.value(v);
                cosine(t.row(0), t.row(1))
            }
            Err(_) => 0.0,
        }
    }
}

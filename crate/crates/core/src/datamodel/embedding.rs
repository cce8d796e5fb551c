use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schema::{FeatureSchema, UNKNOWN_INDEX};
use crate::error::{Error, Result};
use crate::numerics::{normal_init, Graph, ParamId, ParamStore, Tensor, Var, EMBEDDING_INIT_STD};

/// One learnable `e_i × v_i` table per categorical feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTables {
    pub tables: Vec<ParamId>,
    pub dims: Vec<usize>,
}

impl EmbeddingTables {
    /// Tables are named `embed.<feature>`. `dim_override` replaces every
    /// schema `e_i` (the FT-Transformer bottom needs all tokens at `d`).
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        schema: &FeatureSchema,
        dim_override: Option<usize>,
    ) -> Result<Self> {
        let mut tables = Vec::with_capacity(schema.categorical.len());
        let mut dims = Vec::with_capacity(schema.categorical.len());
        for f in &schema.categorical {
            let e = dim_override.unwrap_or(f.embed_dim);
            let t = normal_init(rng, &[e, f.vocab_size()], EMBEDDING_INIT_STD);
            tables.push(store.add(format!("embed.{}", f.name), t)?);
            dims.push(e);
        }
        Ok(Self { tables, dims })
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    /// Batch lookup for feature `i`: `B × e_i`. Out-of-vocabulary indices
    /// fall back to UNKNOWN.
    pub fn lookup(&self, g: &Graph, store: &ParamStore, i: usize, indices: &[usize]) -> Result<Var> {
        let id = *self.tables.get(i).ok_or(Error::Index {
            what: "categorical feature",
            index: i,
            size: self.tables.len(),
        })?;
        embed_categorical(g, store, id, indices)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.tables.clone()
    }
}

/// Selects columns of one embedding table, mapping indices `≥ v` to UNKNOWN.
pub fn embed_categorical(g: &Graph, store: &ParamStore, table: ParamId, indices: &[usize]) -> Result<Var> {
    let v = store.get(table).cols();
    let idx: Vec<usize> = indices
        .iter()
        .map(|&i| if i < v { i } else { UNKNOWN_INDEX })
        .collect();
    g.gather_cols(g.param(store, table), &idx)
}

/// Plain-value form of [`embed_categorical`] for a single index.
pub fn embed_column(table: &Tensor, index: usize) -> Vec<f64> {
    let (e, v) = (table.rows(), table.cols());
    let i = if index < v { index } else { UNKNOWN_INDEX };
    (0..e).map(|r| table.data()[r * v + i]).collect()
}

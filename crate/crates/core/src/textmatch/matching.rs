use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

/// How query and product text embeddings are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchingMode {
    /// Element-wise product, `d` values.
    #[default]
    Cross,
    /// Inner product, one value.
    Dot,
    /// No text matching segment.
    Off,
}

impl MatchingMode {
    pub fn width(self, dim: usize) -> usize {
        match self {
            MatchingMode::Cross => dim,
            MatchingMode::Dot => 1,
            MatchingMode::Off => 0,
        }
    }
}

pub fn match_cross(query: &[f64], product: &[f64]) -> Result<Vec<f64>> {
    if query.len() != product.len() {
        return Err(Error::dim(
            "match_cross",
            format!("query dim {}, product dim {}", query.len(), product.len()),
        ));
    }
    Ok(query.iter().zip(product).map(|(a, b)| a * b).collect())
}

pub fn match_dot(query: &[f64], product: &[f64]) -> Result<f64> {
    if query.len() != product.len() {
        return Err(Error::dim(
            "match_dot",
            format!("query dim {}, product dim {}", query.len(), product.len()),
        ));
    }
    Ok(query.iter().zip(product).map(|(a, b)| a * b).sum())
}

/// Graph form: rows of `query` and `product` are paired. Returns `None` for
/// [`MatchingMode::Off`].
pub fn match_rows(g: &Graph, mode: MatchingMode, query: Var, product: Var) -> Result<Option<Var>> {
    match mode {
        MatchingMode::Cross => g.mul(query, product).map(Some),
        MatchingMode::Dot => {
            let m = g.mul(query, product)?;
            g.row_sum(m).map(Some)
        }
        MatchingMode::Off => Ok(None),
    }
}

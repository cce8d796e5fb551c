use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::FttConfig;
use super::layers::{learned_token, LayerNormParams, Linear, TransformerBlock};
use crate::error::{Error, Result};
use crate::numerics::{xavier_uniform, Graph, ParamId, ParamStore, Tensor, Var};

/// `W_i · x + b_i` for a single scalar feature.
pub fn tokenize_numeric(x: f64, w: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if w.len() != b.len() {
        return Err(Error::dim("ftt_tokenize_numeric", format!("W has {} entries, b has {}", w.len(), b.len())));
    }
    Ok(w.iter().zip(b).map(|(w, b)| w * x + b).collect())
}

/// Affine map of the matching vector to a `d`-dimensional token; `w` is `d × m`.
pub fn project_matching(x: &[f64], w: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    if w.shape().len() != 2 || w.cols() != x.len() || w.rows() != b.len() {
        return Err(Error::dim(
            "ftt_project_matching",
            format!("W {:?}, x {}, b {}", w.shape(), x.len(), b.len()),
        ));
    }
    Ok((0..w.rows())
        .map(|r| w.row(r).iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b[r])
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericTokenizer {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Feature-tokenizer transformer with a learned CLS readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FttBottom {
    pub dim: usize,
    pub numeric: Vec<NumericTokenizer>,
    pub matching: Option<Linear>,
    pub cls: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub ln_out: LayerNormParams,
    pub out: Linear,
}

impl FttBottom {
    /// `numeric_features` tokens come from scalars; `matching_dim` is 0 when
    /// there is no matching token.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        numeric_features: usize,
        matching_dim: usize,
        config: &FttConfig,
    ) -> Result<Self> {
        let d = config.dim;
        let mut numeric = Vec::with_capacity(numeric_features);
        for i in 0..numeric_features {
            numeric.push(NumericTokenizer {
                weight: store.add(format!("{name}.num.{i}.weight"), xavier_uniform(rng, 1, d))?,
                bias: store.add(format!("{name}.num.{i}.bias"), Tensor::zeros(&[1, d]))?,
            });
        }
        let matching = if matching_dim > 0 {
            Some(Linear::new(store, rng, &format!("{name}.match_proj"), matching_dim, d, true)?)
        } else {
            None
        };
        let cls = learned_token(store, rng, &format!("{name}.cls"), d)?;
        let blocks = (0..config.layers)
            .map(|i| TransformerBlock::new(store, rng, &format!("{name}.block{i}"), d, config.heads, config.ff_dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim: d,
            numeric,
            matching,
            cls,
            blocks,
            ln_out: LayerNormParams::new(store, &format!("{name}.ln_out"), d)?,
            out: Linear::new(store, rng, &format!("{name}.out"), d, config.out_dim, true)?,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out.out_dim
    }

    /// Tokens per example: CLS, numeric, categorical, and the matching token.
    pub fn token_count(&self, categorical: usize) -> usize {
        1 + self.numeric.len() + categorical + usize::from(self.matching.is_some())
    }

    /// Token rows (each `B × d`) in stacking order, before the transformer.
    pub fn tokens(
        &self,
        g: &Graph,
        store: &ParamStore,
        numeric: &Tensor,
        categorical: &[Var],
        matching: Option<Var>,
    ) -> Result<Vec<Var>> {
        let batch = numeric.rows();
        if numeric.cols() != self.numeric.len() {
            return Err(Error::dim(
                "ftt_forward",
                format!("{} numeric columns for {} tokenizers", numeric.cols(), self.numeric.len()),
            ));
        }
        let mut tokens = Vec::with_capacity(self.token_count(categorical.len()));
        tokens.push(g.gather_rows(g.param(store, self.cls), &vec![0; batch])?);
        for (j, tok) in self.numeric.iter().enumerate() {
            let col: Vec<f64> = (0..batch).map(|b| numeric.at(b, j)).collect();
            let x = g.constant(Tensor::matrix(batch, 1, col)?);
            let t = g.matmul(x, g.param(store, tok.weight))?;
            tokens.push(g.add_row(t, g.param(store, tok.bias))?);
        }
        for &c in categorical {
            if g.cols(c) != self.dim || g.rows(c) != batch {
                return Err(Error::dim(
                    "ftt_forward",
                    format!("categorical token has shape {:?}, expected [{batch}, {}]", g.shape(c), self.dim),
                ));
            }
            tokens.push(c);
        }
        match (&self.matching, matching) {
            (Some(proj), Some(m)) => tokens.push(proj.forward(g, store, m)?),
            (None, None) => {}
            _ => return Err(Error::dim("ftt_forward", "matching token presence differs from the bottom layout")),
        }
        Ok(tokens)
    }

    /// `x_final = Linear(ReLU(LayerNorm(CLS after the transformer)))`
    pub fn forward(
        &self,
        g: &Graph,
        store: &ParamStore,
        numeric: &Tensor,
        categorical: &[Var],
        matching: Option<Var>,
    ) -> Result<Var> {
        let batch = numeric.rows();
        let tokens = self.tokens(g, store, numeric, categorical, matching)?;
        let t = tokens.len();
        // feature-major stack → example-major rows, one segment per example
        let stacked = g.concat_rows(&tokens)?;
        let perm: Vec<usize> = (0..batch).flat_map(|b| (0..t).map(move |k| k * batch + b)).collect();
        let mut h = g.gather_rows(stacked, &perm)?;
        let segments = vec![t; batch];
        for block in &self.blocks {
            h = block.forward(g, store, h, &segments)?;
        }
        let cls_rows: Vec<usize> = (0..batch).map(|b| b * t).collect();
        let cls = g.gather_rows(h, &cls_rows)?;
        let z = g.relu(self.ln_out.forward(g, store, cls)?)?;
        self.out.forward(g, store, z)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.numeric.iter().flat_map(|t| [t.weight, t.bias]).collect();
        if let Some(m) = &self.matching {
            p.extend(m.params());
        }
        p.push(self.cls);
        for b in &self.blocks {
            p.extend(b.params());
        }
        p.extend(self.ln_out.params());
        p.extend(self.out.params());
        p
    }
}

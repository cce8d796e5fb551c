//! Dense, MLP and pre-norm transformer building blocks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{normal_init, xavier_uniform, Graph, ParamId, ParamStore, Tensor, Var};

/// `y = x · Wᵀ + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), xavier_uniform(rng, out_dim, in_dim))?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let y = g.matmul_nt(x, g.param(store, self.weight))?;
        match self.bias {
            Some(b) => g.add_row(y, g.param(store, b)),
            None => Ok(y),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Feed-forward stack with ReLU between layers (and after the last one when
/// `relu_last`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub relu_last: bool,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        widths: &[usize],
        relu_last: bool,
    ) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::Config(format!("`{name}` needs at least one layer")));
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = in_dim;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Linear::new(store, rng, &format!("{name}.{i}"), prev, w, true)?);
            prev = w;
        }
        Ok(Self { layers, relu_last })
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, g: &Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            if i < last || self.relu_last {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Linear::params).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::filled(&[dim], 1.0))?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward(&self, g: &Graph, store: &ParamStore, x: Var) -> Result<Var> {
        g.layer_norm(x, g.param(store, self.gain), g.param(store, self.bias))
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gain, self.bias]
    }
}

/// Pre-norm transformer block: `x + Attn(LN(x))`, then `x + FFN(LN(x))`.
/// The key projection has no bias; it would cancel in the softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerBlock {
    pub heads: usize,
    pub ln_attn: LayerNormParams,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub proj: Linear,
    pub ln_ff: LayerNormParams,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

impl TransformerBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "`{name}`: dimension {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            heads,
            ln_attn: LayerNormParams::new(store, &format!("{name}.ln_attn"), dim)?,
            query: Linear::new(store, rng, &format!("{name}.query"), dim, dim, true)?,
            key: Linear::new(store, rng, &format!("{name}.key"), dim, dim, false)?,
            value: Linear::new(store, rng, &format!("{name}.value"), dim, dim, true)?,
            proj: Linear::new(store, rng, &format!("{name}.proj"), dim, dim, true)?,
            ln_ff: LayerNormParams::new(store, &format!("{name}.ln_ff"), dim)?,
            ff_in: Linear::new(store, rng, &format!("{name}.ff_in"), dim, ff_dim, true)?,
            ff_out: Linear::new(store, rng, &format!("{name}.ff_out"), ff_dim, dim, true)?,
        })
    }

    /// `x` stacks independent sequences row-wise; `segments` gives their lengths.
    pub fn forward(&self, g: &Graph, store: &ParamStore, x: Var, segments: &[usize]) -> Result<Var> {
        let h = self.ln_attn.forward(g, store, x)?;
        let q = self.query.forward(g, store, h)?;
        let k = self.key.forward(g, store, h)?;
        let v = self.value.forward(g, store, h)?;
        let att = g.attention(q, k, v, segments, self.heads)?;
        let x = g.add(x, self.proj.forward(g, store, att)?)?;
        let h = self.ln_ff.forward(g, store, x)?;
        let h = g.relu(self.ff_in.forward(g, store, h)?)?;
        let h = self.ff_out.forward(g, store, h)?;
        g.add(x, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.ln_attn.params();
        for l in [&self.query, &self.key, &self.value, &self.proj] {
            p.extend(l.params());
        }
        p.extend(self.ln_ff.params());
        p.extend(self.ff_in.params());
        p.extend(self.ff_out.params());
        p
    }
}

/// Learned token initialized `normal(0, 0.02)`.
pub fn learned_token<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, dim: usize) -> Result<ParamId> {
    store.add(name, normal_init(rng, &[1, dim], crate::numerics::EMBEDDING_INIT_STD))
}

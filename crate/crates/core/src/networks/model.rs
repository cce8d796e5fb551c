use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::config::{BottomKind, ModelConfig, Task};
use super::dcn::{DcnBottom, X0Layout};
use super::ftt::FttBottom;
use super::mmoe::{Mmoe, TaskOutputs};
use crate::datamodel::{EmbeddingTables, EncodedExample, FeatureSchema};
use crate::error::{Error, Result};
use crate::numerics::{component_rng, Graph, ParamId, ParamStore, Tensor, Var};
use crate::textmatch::{match_rows, MatchingMode, TextEncoder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Bottom {
    Dcn(DcnBottom),
    Ftt(FttBottom),
}

impl Bottom {
    pub fn out_dim(&self) -> usize {
        match self {
            Bottom::Dcn(b) => b.out_dim(),
            Bottom::Ftt(b) => b.out_dim(),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Bottom::Dcn(b) => b.params(),
            Bottom::Ftt(b) => b.params(),
        }
    }
}

/// Model structure: which parameters exist and how they connect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: ModelConfig,
    pub schema_hash: String,
    pub continuous: usize,
    pub interaction_slots: usize,
    pub active_interactions: Vec<usize>,
    pub embeddings: EmbeddingTables,
    pub text: Option<TextEncoder>,
    pub bottom: Bottom,
    pub mmoe: Mmoe,
}

/// Intermediate values of one forward pass, exposed for inspection.
pub struct ForwardTrace {
    pub matching: Option<Var>,
    pub x_final: Var,
    pub outputs: TaskOutputs,
}

impl Network {
    /// Parameter names: `embed.*`, `text.*`, `bottom.*`, `expert.*`, `gate.*`,
    /// `tower.*`. Every component draws from its own seeded stream.
    pub fn new(
        store: &mut ParamStore,
        schema: &FeatureSchema,
        vocab_size: usize,
        config: &ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        schema.validate()?;
        let text = if config.matching == MatchingMode::Off {
            None
        } else {
            Some(TextEncoder::new(
                store,
                &mut component_rng(seed, "text"),
                "text",
                &config.text,
                vocab_size,
            )?)
        };
        let matching_dim = config.matching.width(config.text.dim);
        let active_interactions = schema.active_interactions();
        let continuous = schema.continuous.len();
        let dim_override = (config.bottom == BottomKind::Ftt).then_some(config.ftt.dim);
        let embeddings = EmbeddingTables::new(store, &mut component_rng(seed, "embed"), schema, dim_override)?;
        let mut rng = component_rng(seed, "bottom");
        let bottom = match config.bottom {
            BottomKind::Dcn => {
                let layout = X0Layout {
                    continuous,
                    matching: matching_dim,
                    interaction: active_interactions.len(),
                    embeddings: embeddings.dims.clone(),
                };
                Bottom::Dcn(DcnBottom::new(store, &mut rng, "bottom", layout.len(), &config.dcn)?)
            }
            BottomKind::Ftt => Bottom::Ftt(FttBottom::new(
                store,
                &mut rng,
                "bottom",
                continuous + active_interactions.len(),
                matching_dim,
                &config.ftt,
            )?),
        };
        let mmoe = Mmoe::new(store, &mut |name| component_rng(seed, name), bottom.out_dim(), &config.mmoe)?;
        Ok(Self {
            config: config.clone(),
            schema_hash: schema.hash(),
            continuous,
            interaction_slots: schema.interaction.len(),
            active_interactions,
            embeddings,
            text,
            bottom,
            mmoe,
        })
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.mmoe.heads.iter().map(|h| h.task).collect()
    }

    /// Segment widths of the DCN input.
    pub fn x0_layout(&self) -> X0Layout {
        X0Layout {
            continuous: self.continuous,
            matching: self.config.matching.width(self.config.text.dim),
            interaction: self.active_interactions.len(),
            embeddings: self.embeddings.dims.clone(),
        }
    }

    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        let h = schema.hash();
        if h != self.schema_hash {
            return Err(Error::Config(format!(
                "feature schema {} does not match the model's training schema {}",
                &h[..12],
                &self.schema_hash[..12.min(self.schema_hash.len())]
            )));
        }
        Ok(())
    }

    fn check_example(&self, ex: &EncodedExample) -> Result<()> {
        let cats = self.embeddings.tables.len();
        if ex.continuous.len() != self.continuous
            || ex.interaction.len() != self.interaction_slots
            || ex.categorical.len() != cats
        {
            return Err(Error::Config(format!(
                "example for ({}, {}) has {}/{}/{} continuous/interaction/categorical values, model expects {}/{}/{}",
                ex.query_id,
                ex.product_id,
                ex.continuous.len(),
                ex.interaction.len(),
                ex.categorical.len(),
                self.continuous,
                self.interaction_slots,
                cats
            )));
        }
        Ok(())
    }

    /// Query/product matching vectors for the batch. Distinct token sequences
    /// are encoded once.
    pub fn matching(&self, g: &Graph, store: &ParamStore, batch: &[&EncodedExample]) -> Result<Option<Var>> {
        let Some(enc) = &self.text else {
            return Ok(None);
        };
        let mut unique: Vec<&[u32]> = Vec::new();
        let mut index: HashMap<&[u32], usize> = HashMap::new();
        let mut qi = Vec::with_capacity(batch.len());
        let mut di = Vec::with_capacity(batch.len());
        for ex in batch {
            for (seq, dst) in [(&ex.query_tokens[..], &mut qi), (&ex.doc_tokens[..], &mut di)] {
                let next = unique.len();
                let i = *index.entry(seq).or_insert(next);
                if i == next {
                    unique.push(seq);
                }
                dst.push(i);
            }
        }
        let pooled = enc.encode(g, store, &unique)?;
        let q = g.gather_rows(pooled, &qi)?;
        let d = g.gather_rows(pooled, &di)?;
        match_rows(g, self.config.matching, q, d)
    }

    pub fn trace(&self, g: &Graph, store: &ParamStore, batch: &[&EncodedExample]) -> Result<ForwardTrace> {
        if batch.is_empty() {
            return Err(Error::dim("forward", "empty batch"));
        }
        for ex in batch {
            self.check_example(ex)?;
        }
        let b = batch.len();
        let matching = self.matching(g, store, batch)?;
        let mut embs = Vec::with_capacity(self.embeddings.tables.len());
        for i in 0..self.embeddings.tables.len() {
            let idx: Vec<usize> = batch.iter().map(|ex| ex.categorical[i]).collect();
            embs.push(self.embeddings.lookup(g, store, i, &idx)?);
        }
        let cont: Vec<f64> = batch.iter().flat_map(|ex| ex.continuous.iter().copied()).collect();
        let inter: Vec<f64> = batch
            .iter()
            .flat_map(|ex| self.active_interactions.iter().map(|&k| ex.interaction[k]))
            .collect();
        let x_final = match &self.bottom {
            Bottom::Dcn(dcn) => {
                let mut parts = Vec::with_capacity(3 + embs.len());
                if self.continuous > 0 {
                    parts.push(g.constant(Tensor::matrix(b, self.continuous, cont)?));
                }
                parts.extend(matching);
                if !self.active_interactions.is_empty() {
                    parts.push(g.constant(Tensor::matrix(b, self.active_interactions.len(), inter)?));
                }
                parts.extend(embs);
                let x0 = g.concat_cols(&parts)?;
                dcn.forward(g, store, x0)?
            }
            Bottom::Ftt(ftt) => {
                let k = self.continuous + self.active_interactions.len();
                let mut numeric = Vec::with_capacity(b * k);
                for r in 0..b {
                    numeric.extend_from_slice(&cont[r * self.continuous..(r + 1) * self.continuous]);
                    let n = self.active_interactions.len();
                    numeric.extend_from_slice(&inter[r * n..(r + 1) * n]);
                }
                ftt.forward(g, store, &Tensor::matrix(b, k, numeric)?, &embs, matching)?
            }
        };
        let outputs = self.mmoe.forward(g, store, x_final)?;
        Ok(ForwardTrace {
            matching,
            x_final,
            outputs,
        })
    }

    pub fn forward(&self, g: &Graph, store: &ParamStore, batch: &[&EncodedExample]) -> Result<TaskOutputs> {
        Ok(self.trace(g, store, batch)?.outputs)
    }

    /// Every parameter id reachable from the structure, in a fixed order.
    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.embeddings.params();
        if let Some(t) = &self.text {
            p.extend(t.params());
        }
        p.extend(self.bottom.params());
        p.extend(self.mmoe.params());
        p
    }
}

/// Per-task scores for a list of examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    /// Probabilities of the binary tasks.
    pub probabilities: BTreeMap<Task, Vec<f64>>,
    /// Class logits when the relevance task is active.
    pub relevance_logits: Option<Vec<Vec<f64>>>,
}

impl Predictions {
    pub fn task(&self, task: Task) -> Result<&[f64]> {
        self.probabilities
            .get(&task)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("model has no `{task}` probability output")))
    }
}

/// A network plus its parameter values.
#[derive(Debug, Clone)]
pub struct Model {
    pub network: Network,
    pub store: ParamStore,
}

const PREDICT_CHUNK: usize = 512;

impl Model {
    pub fn new(schema: &FeatureSchema, vocab_size: usize, config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let network = Network::new(&mut store, schema, vocab_size, config, seed)?;
        Ok(Self { network, store })
    }

    /// Pure scoring; results do not depend on how examples are batched.
    pub fn predict(&self, examples: &[EncodedExample]) -> Result<Predictions> {
        let refs: Vec<&EncodedExample> = examples.iter().collect();
        self.predict_refs(&refs)
    }

    pub fn predict_refs(&self, examples: &[&EncodedExample]) -> Result<Predictions> {
        let tasks = self.network.tasks();
        let mut probabilities: BTreeMap<Task, Vec<f64>> = tasks
            .iter()
            .filter(|t| t.is_binary())
            .map(|&t| (t, Vec::with_capacity(examples.len())))
            .collect();
        let mut relevance = tasks.contains(&Task::Relevance).then(Vec::new);
        for chunk in examples.chunks(PREDICT_CHUNK) {
            let g = Graph::inference();
            let out = self.network.forward(&g, &self.store, chunk)?;
            for (task, var) in &out.outputs {
                let v = g.value(*var);
                if task.is_binary() {
                    probabilities.get_mut(task).expect("task").extend_from_slice(v.data());
                } else if let Some(r) = relevance.as_mut() {
                    r.extend((0..v.rows()).map(|i| v.row(i).to_vec()));
                }
            }
        }
        Ok(Predictions {
            probabilities,
            relevance_logits: relevance,
        })
    }

    /// Element count over every tensor reachable from the structure.
    pub fn parameter_census(&self) -> usize {
        self.network.params().iter().map(|&id| self.store.get(id).len()).sum()
    }

    pub fn trainable_parameters(&self) -> usize {
        self.store.trainable_element_count()
    }
}

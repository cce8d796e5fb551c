use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{MmoeConfig, Task};
use super::layers::{Linear, Mlp};
use crate::error::{Error, Result};
use crate::numerics::{kernels, Graph, ParamId, ParamStore, Tensor, Var};

/// `softmax(W · x)` for one example; `W` is `n × len(x)`.
pub fn gate_forward(x: &[f64], w: &Tensor) -> Result<Vec<f64>> {
    if w.shape().len() != 2 || w.cols() != x.len() {
        return Err(Error::dim("gate_forward", format!("W {:?}, x {}", w.shape(), x.len())));
    }
    let logits: Vec<f64> = (0..w.rows())
        .map(|r| w.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect();
    Ok(kernels::softmax(&Tensor::vector(logits))?.into_data())
}

/// `Σ_i gates[i] · experts[i]`
pub fn mix_experts(gates: &[f64], experts: &[Vec<f64>]) -> Result<Vec<f64>> {
    if gates.len() != experts.len() || experts.is_empty() {
        return Err(Error::dim("mix_experts", format!("{} gates, {} experts", gates.len(), experts.len())));
    }
    let d = experts[0].len();
    if let Some(e) = experts.iter().find(|e| e.len() != d) {
        return Err(Error::dim("mix_experts", format!("expert output dims {d} and {}", e.len())));
    }
    let mut out = vec![0.0; d];
    for (g, e) in gates.iter().zip(experts) {
        for (o, v) in out.iter_mut().zip(e) {
            *o += g * v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskHead {
    pub task: Task,
    /// Bias-free gate over the experts.
    pub gate: Linear,
    pub tower: Mlp,
}

/// Shared experts with one gate and one tower per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mmoe {
    pub experts: Vec<Mlp>,
    pub heads: Vec<TaskHead>,
}

/// Per-task outputs: `B × 1` probabilities for binary tasks, `B × c` logits
/// for relevance.
#[derive(Debug, Clone)]
pub struct TaskOutputs {
    pub outputs: Vec<(Task, Var)>,
}

impl TaskOutputs {
    pub fn get(&self, task: Task) -> Option<Var> {
        self.outputs.iter().find(|(t, _)| *t == task).map(|(_, v)| *v)
    }
}

impl Mmoe {
    /// Parameters are named `expert.<i>.*`, `gate.<task>.*`, `tower.<task>.*`.
    /// Each component takes its RNG from `rng_for`, so the census of one
    /// component never depends on which others exist.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng_for: &mut dyn FnMut(&str) -> R,
        in_dim: usize,
        config: &MmoeConfig,
    ) -> Result<Self> {
        config.validate()?;
        let mut experts = Vec::with_capacity(config.num_experts);
        for i in 0..config.num_experts {
            let name = format!("expert.{i}");
            let mut rng = rng_for(&name);
            experts.push(Mlp::new(store, &mut rng, &name, in_dim, &config.expert_widths, true)?);
        }
        let expert_dim = experts[0].out_dim();
        let mut heads = Vec::with_capacity(config.tasks.len());
        for &task in &config.tasks {
            let gate_name = format!("gate.{task}");
            let gate = Linear::new(store, &mut rng_for(&gate_name), &gate_name, in_dim, config.num_experts, false)?;
            let out = if task.is_binary() { 1 } else { config.relevance_classes };
            let mut widths = config.tower_widths.clone();
            widths.push(out);
            let tower_name = format!("tower.{task}");
            let tower = Mlp::new(store, &mut rng_for(&tower_name), &tower_name, expert_dim, &widths, false)?;
            heads.push(TaskHead { task, gate, tower });
        }
        Ok(Self { experts, heads })
    }

    pub fn forward(&self, g: &Graph, store: &ParamStore, x_final: Var) -> Result<TaskOutputs> {
        let expert_out = self
            .experts
            .iter()
            .map(|e| e.forward(g, store, x_final))
            .collect::<Result<Vec<_>>>()?;
        let mut outputs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let gates = g.softmax(head.gate.forward(g, store, x_final)?)?;
            let h = g.mix(gates, &expert_out)?;
            let y = head.tower.forward(g, store, h)?;
            let y = if head.task.is_binary() { g.sigmoid(y)? } else { y };
            outputs.push((head.task, y));
        }
        Ok(TaskOutputs { outputs })
    }

    /// Gate distributions per task, `B × n` each.
    pub fn gates(&self, g: &Graph, store: &ParamStore, x_final: Var) -> Result<Vec<(Task, Var)>> {
        self.heads
            .iter()
            .map(|h| Ok((h.task, g.softmax(h.gate.forward(g, store, x_final)?)?)))
            .collect()
    }

    pub fn head(&self, task: Task) -> Result<&TaskHead> {
        self.heads
            .iter()
            .find(|h| h.task == task)
            .ok_or_else(|| Error::Config(format!("model has no `{task}` task")))
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.experts.iter().flat_map(Mlp::params).collect();
        for h in &self.heads {
            p.extend(h.gate.params());
            p.extend(h.tower.params());
        }
        p
    }
}

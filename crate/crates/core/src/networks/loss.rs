use super::config::{MmoeConfig, Task};
use super::mmoe::TaskOutputs;
use crate::datamodel::Labels;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

fn binary_labels(labels: &[Labels], task: Task) -> Vec<f64> {
    labels
        .iter()
        .map(|l| match task {
            Task::Click => l.click,
            Task::Atc => l.atc,
            Task::Trx => l.trx,
            Task::Relevance => unreachable!("relevance is not binary"),
        })
        .collect()
}

/// Weighted sum of per-task batch-mean losses: BCE for binary tasks, CCE for
/// relevance. Tasks with weight 0 are left out of the graph entirely.
pub fn mtl_loss(g: &Graph, outputs: &TaskOutputs, labels: &[Labels], config: &MmoeConfig) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (&task, &alpha) in config.tasks.iter().zip(&config.weights) {
        if alpha < 0.0 {
            return Err(Error::Config(format!("task weight for `{task}` is negative")));
        }
        if alpha == 0.0 {
            continue;
        }
        let out = outputs
            .get(task)
            .ok_or_else(|| Error::Config(format!("no output for task `{task}`")))?;
        let l = if task.is_binary() {
            g.bce_mean(out, &binary_labels(labels, task))?
        } else {
            let classes = labels
                .iter()
                .map(|l| l.relevance)
                .collect::<Option<Vec<usize>>>()
                .ok_or_else(|| Error::Data("relevance task is active but an example has no relevance_class".into()))?;
            g.cce_mean(out, &classes)?
        };
        let l = g.scale(l, alpha)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    total.ok_or_else(|| Error::Config("all task weights are zero".into()))
}

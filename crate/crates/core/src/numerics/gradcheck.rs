//! Central finite-difference checking of analytic gradients.

use super::{Graph, ParamStore, Var};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Largest discrepancy found by [`check_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps near-zero gradients from
/// amplifying finite-difference round-off.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares the gradient of `loss_fn` against central differences for every
/// trainable element of `store` (up to `max_per_param` elements per tensor).
pub fn check_params<F>(store: &mut ParamStore, max_per_param: usize, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&Graph, &ParamStore) -> Result<Var>,
{
    let g = Graph::new();
    let loss = loss_fn(&g, store)?;
    let grads = g.backward(loss)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let ids: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for id in ids {
        let analytic = grads.param_or_zeros(id, store);
        let n = store.get(id).len().min(max_per_param);
        for i in 0..n {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = eval(store, &loss_fn)?;
            store.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = eval(store, &loss_fn)?;
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(analytic.data()[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = store.name(id).to_string();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

fn eval<F>(store: &ParamStore, loss_fn: &F) -> Result<f64>
where
    F: Fn(&Graph, &ParamStore) -> Result<Var>,
{
    let g = Graph::inference();
    let loss = loss_fn(&g, store)?;
    Ok(g.value(loss).item())
}

/// Adds `normal(0, std)` noise to every parameter. Freshly initialized
/// networks have zero biases, which can park ReLU inputs exactly on the kink
/// where finite differences disagree with the one-sided derivative.
pub fn jitter<R: rand::Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, std: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let noise = super::normal_init(rng, store.get(id).shape(), std);
        for (v, n) in store.get_mut(id).data_mut().iter_mut().zip(noise.data()) {
            *v += n;
        }
    }
}

//! Minimal dense tensors, parameter storage, reverse-mode differentiation and
//! the Adam optimizer.

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, NodeId, LAYER_NORM_EPS};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use params::{gaussian, ParamId, ParamRecord, ParamStore};
pub use tensor::Tensor;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Worst discrepancy found by [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
}

/// Compares analytic gradients of `loss_fn` against central differences on up
/// to `per_param` randomly chosen coordinates of every parameter.
///
/// The error measure is `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(params: &ParamStore, eps: f64, per_param: usize, seed: u64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<NodeId>,
{
    grad_check_with(params, eps, per_param, seed, |p| {
        let mut g = Graph::new(p);
        let loss = loss_fn(&mut g)?;
        Ok((g, loss))
    })
}

/// [`grad_check`] for loss functions that build their own graph.
pub fn grad_check_with<F>(params: &ParamStore, eps: f64, per_param: usize, seed: u64, loss_fn: F) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&'a ParamStore) -> Result<(Graph<'a>, NodeId)>,
{
    let analytic = {
        let (g, loss) = loss_fn(params)?;
        g.backward(loss)?
    };
    let eval = |p: &ParamStore| -> Result<f64> {
        let (g, loss) = loss_fn(p)?;
        Ok(g.value(loss).scalar())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
    };
    for id in params.ids() {
        let n = params.get(id).len();
        let picks = sample(&mut rng, n, per_param.min(n)).into_vec();
        for i in picks {
            let orig = params.get(id).data[i];
            work.get_mut(id).data[i] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(id).data[i] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(id).data[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g[i]);
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst_param = params.name(id).to_string();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

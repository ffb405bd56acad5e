use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Largest `|analytic - central difference| / max(1, |analytic|)` over every
/// entry of every parameter.
///
/// `loss_fn` receives a fresh graph and one leaf per parameter and must build
/// a deterministic scalar loss.
pub fn grad_check<F>(loss_fn: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = loss_fn(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let shapes: Vec<_> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| (*v, p.shape()))
        .collect();
    let analytic = grads.collect(&shapes);

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| g.constant(p.clone())).collect();
        let loss = loss_fn(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, grad) in analytic.iter().enumerate() {
        for j in 0..params[pi].len() {
            let orig = params[pi].data()[j];
            work[pi].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

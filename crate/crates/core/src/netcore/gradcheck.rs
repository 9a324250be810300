use crate::error::{Error, Result};

use super::model::{grad_absolute, grad_pairwise, AbsExample, AbsoluteModel, PairwiseModel};
use super::ParamSet;

/// Below this magnitude, errors are measured against this floor instead of
/// the gradient itself.
const REL_FLOOR: f64 = 1e-6;

/// Worst relative error between `analytic` and central finite differences of
/// `loss` over every coordinate of `params`.
pub fn grad_check<P, F>(params: &P, analytic: &P, epsilon: f64, loss: F) -> Result<f64>
where
    P: ParamSet + Clone,
    F: Fn(&P) -> Result<f64>,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut probe = params.clone();
    let grads: Vec<Vec<f64>> = analytic.blocks().iter().map(|b| b.values.to_vec()).collect();
    let n_blocks = grads.len();
    let mut worst = 0.0f64;
    for bi in 0..n_blocks {
        for i in 0..grads[bi].len() {
            let orig = probe.blocks_mut()[bi][i];
            probe.blocks_mut()[bi][i] = orig + epsilon;
            let up = loss(&probe)?;
            probe.blocks_mut()[bi][i] = orig - epsilon;
            let down = loss(&probe)?;
            probe.blocks_mut()[bi][i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = grads[bi][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

pub fn grad_check_pairwise(model: &PairwiseModel, batch: &[(&[f64], &[f64])], epsilon: f64) -> Result<f64> {
    let (_, g) = grad_pairwise(model, batch)?;
    grad_check(model, &g, epsilon, |m| m.loss(batch))
}

pub fn grad_check_absolute(model: &AbsoluteModel, batch: &[AbsExample<'_>], epsilon: f64) -> Result<f64> {
    let (_, g) = grad_absolute(model, batch)?;
    grad_check(&model.params, &g, epsilon, |p| {
        let m = AbsoluteModel {
            params: p.clone(),
            frozen: model.frozen.clone(),
        };
        m.loss(batch)
    })
}

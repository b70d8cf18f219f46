//! Central finite-difference gradient checking used throughout the test
//! suite: analytic gradients from the tape are compared against
//! `(f(θ+h) − f(θ−h)) / 2h` per parameter element.

use crate::error::Result;
use crate::tensor::{Graph, Param, Real, Tensor};

/// Step size for central differences (64-bit builds).
pub const FD_STEP: Real = 1e-5;

/// Runs `forward` once analytically and twice per parameter element for
/// central differences; returns the maximum relative gradient error across
/// all elements of all parameters.
///
/// `forward` must be deterministic (no dropout) and must bind every entry of
/// `params` into the graph it is given.
pub fn max_grad_rel_error(
    params: &mut [Param],
    forward: &mut dyn FnMut(&Graph, &[Param]) -> Result<Tensor>,
) -> Result<Real> {
    for p in params.iter_mut() {
        p.zero_grad();
    }
    let g = Graph::new();
    let loss = forward(&g, params)?;
    g.backward(&loss)?;
    {
        let mut refs: Vec<&mut Param> = params.iter_mut().collect();
        g.accumulate_param_grads(&mut refs);
    }
    let analytic: Vec<Vec<Real>> = params.iter().map(|p| p.grad.clone()).collect();

    let mut worst: Real = 0.0;
    for pi in 0..params.len() {
        if !params[pi].trainable {
            continue;
        }
        for ei in 0..params[pi].data.len() {
            let orig = params[pi].data[ei];
            params[pi].data[ei] = orig + FD_STEP;
            let plus = eval_scalar(params, forward)?;
            params[pi].data[ei] = orig - FD_STEP;
            let minus = eval_scalar(params, forward)?;
            params[pi].data[ei] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let exact = analytic[pi][ei];
            let denom = (exact.abs() + numeric.abs()).max(1e-6);
            let rel = (exact - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

fn eval_scalar(
    params: &mut [Param],
    forward: &mut dyn FnMut(&Graph, &[Param]) -> Result<Tensor>,
) -> Result<Real> {
    let g = Graph::new();
    let loss = forward(&g, params)?;
    Ok(loss.to_vec()[0])
}

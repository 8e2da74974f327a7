//! Approximate natural gradient for the spectral means and scales in the log domain.
//!
//! For component q:
//!
//! ```text
//! nat_grad(log sigma_q) = 0.5 * grad(log sigma_q)
//! nat_grad(log mu_q)    = (sigma_q^{t+1} / mu_q^t)^2 ∘ grad(log mu_q)
//! ```
//!
//! `sigma^{t+1}` is the scale after this iteration's update, so scales must be
//! stepped before means. Each adjusted per-component block (the D-vector for
//! `log mu_q`, and separately for `log sigma_q`) is divided by its 2-norm when
//! that norm exceeds one. Weight and noise coordinates pass through unchanged.

use nalgebra::DMatrix;

use crate::inference::objective::ParamLayout;
use crate::kernel::SmParams;

fn clip_block(grad: &mut [f64], idx: &[usize]) {
    let norm = idx.iter().map(|&i| grad[i] * grad[i]).sum::<f64>().sqrt();
    if norm > 1.0 {
        for &i in idx {
            grad[i] /= norm;
        }
    }
}

/// Adjusts only the `log sigma` blocks; the result does not depend on `sigma^{t+1}`.
pub fn natural_scale_gradient(layout: &ParamLayout, grads: &[f64]) -> Vec<f64> {
    let mut out = grads.to_vec();
    for q in 0..layout.q {
        let idx: Vec<usize> = (0..layout.d).map(|d| layout.scale(q, d)).collect();
        for &i in &idx {
            out[i] *= 0.5;
        }
        clip_block(&mut out, &idx);
    }
    out
}

/// Full adjustment given the current parameters and the already-updated scales.
pub fn natural_gradient(params: &SmParams, next_scales: &DMatrix<f64>, grads: &[f64]) -> Vec<f64> {
    let layout = ParamLayout::of(params);
    let mut out = natural_scale_gradient(&layout, grads);
    for q in 0..layout.q {
        let idx: Vec<usize> = (0..layout.d).map(|d| layout.mean(q, d)).collect();
        for (d, &i) in idx.iter().enumerate() {
            let ratio = next_scales[(q, d)] / params.means[(q, d)];
            out[i] *= ratio * ratio;
        }
        clip_block(&mut out, &idx);
    }
    out
}

//! Finite-difference gradient verification.
//!
//! Central differences with a user-supplied probe width are the independent
//! oracle for every analytic gradient in this crate. Relative error is
//! `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`, so both tiny and
//! large gradients are judged on the same scale.
//!
//! The loss closure is re-evaluated under perturbed parameters, so it must be
//! deterministic in the sense that identical parameters produce identical
//! losses: fix all inputs and derive nothing from fresh randomness. Batch-norm
//! layers may run in train mode — their output reads only the batch
//! statistics, never the running buffers the probes pollute.
//!
//! Perturbed evaluations that differ by no more than a few ulps of the loss
//! are treated as equal: below that floor the central difference measures
//! rounding noise, not a derivative.

use rand::Rng;

use crate::error::Result;

use super::backward::backward;
use super::tensor::Tensor;

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Check analytic gradients of `loss_fn` against central differences.
///
/// Gradients of every tensor in `params` are verified. When a parameter has
/// more entries than `max_probes_per_param`, a random subset is probed using
/// `rng` (pass a seeded stream for reproducible checks). Returns the maximum
/// relative error over all probes.
pub fn grad_check<F, R>(
    params: &[(String, Tensor)],
    loss_fn: F,
    eps: f64,
    max_probes_per_param: usize,
    rng: &mut R,
) -> Result<f64>
where
    F: Fn() -> Result<Tensor>,
    R: Rng,
{
    let loss = loss_fn()?;
    let grads = backward(&loss)?;
    let mut worst: f64 = 0.0;
    for (_name, p) in params {
        let analytic = grads.get_or_zeros(p);
        let n = p.len();
        let probes: Vec<usize> = if n <= max_probes_per_param {
            (0..n).collect()
        } else {
            (0..max_probes_per_param).map(|_| rng.gen_range(0..n)).collect()
        };
        for i in probes {
            let original = p.data()[i];
            p.update_data(|d| d[i] = original + eps);
            let up = loss_fn()?.item();
            p.update_data(|d| d[i] = original - eps);
            let down = loss_fn()?.item();
            p.update_data(|d| d[i] = original);
            // A difference within a few ulps of the loss itself is rounding
            // noise, not signal: central differences cannot resolve it, and
            // dividing it by 2*eps would fabricate a gradient. This matters
            // for parameters with a true derivative of exactly zero (such as
            // a bias feeding batch-norm, which cancels against the batch
            // mean): the analytic gradient is correctly ~0, and the raw
            // quotient would be pure noise.
            let diff = up - down;
            let noise_floor = 32.0 * f64::EPSILON * up.abs().max(down.abs()).max(1.0);
            let numeric = if diff.abs() <= noise_floor { 0.0 } else { diff / (2.0 * eps) };
            worst = worst.max(relative_error(analytic[i], numeric));
        }
    }
    Ok(worst)
}

//! Adam with bias correction and decoupled weight decay.
//!
//! Weight decay is applied as a direct parameter shrinkage `p -= lr * wd * p`
//! *before* the adaptive update, so decay strength is independent of the
//! gradient moments. With zero gradients, zero decay, and fresh moments the
//! step is an exact identity on the parameter values.

use crate::error::{Error, Result};

use super::backward::GradientMap;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Per-parameter first/second moment buffers plus the shared step counter.
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

pub struct Adam {
    pub lr: f64,
    pub hp: AdamParams,
    params: Vec<(String, Tensor)>,
    pub state: AdamState,
}

impl Adam {
    pub fn new(params: Vec<(String, Tensor)>, lr: f64, hp: AdamParams) -> Adam {
        let m = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        let v = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        Adam {
            lr,
            hp,
            params,
            state: AdamState { step: 0, m, v },
        }
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    /// One update over all managed parameters. Parameters absent from the
    /// gradient map are treated as having zero gradient. Any non-finite
    /// gradient entry aborts, naming the parameter.
    pub fn step(&mut self, grads: &GradientMap) -> Result<()> {
        self.state.step += 1;
        let t = self.state.step;
        let b1 = self.hp.beta1;
        let b2 = self.hp.beta2;
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        for (idx, (name, p)) in self.params.iter().enumerate() {
            let g = grads.get_or_zeros(p);
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite gradient {bad} for parameter {name}"
                )));
            }
            let m = &mut self.state.m[idx];
            let v = &mut self.state.v[idx];
            let lr = self.lr;
            let wd = self.hp.weight_decay;
            let eps = self.hp.eps;
            p.update_data(|data| {
                for i in 0..data.len() {
                    if wd != 0.0 {
                        data[i] -= lr * wd * data[i];
                    }
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    data[i] -= lr * mhat / (vhat.sqrt() + eps);
                }
            });
        }
        Ok(())
    }
}

//! Reverse-mode gradient accumulation.
//!
//! [`backward`] walks the recorded graph from a scalar loss in reverse
//! topological order and returns a [`GradientMap`] keyed by tensor id. Every
//! parameter leaf reached by the walk also gets its `grad` field set
//! (replacing, not accumulating, whatever a previous pass left there).
//! Parameters the loss never touched are simply absent from the map;
//! [`GradientMap::get_or_zeros`] reports them as zero.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

use super::tensor::Tensor;

pub struct GradientMap {
    grads: HashMap<u64, Vec<f64>>,
}

impl GradientMap {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads.get(&t.id()).map(Vec::as_slice)
    }

    /// Gradient of `t`, with zeros when the loss did not reach it.
    pub fn get_or_zeros(&self, t: &Tensor) -> Vec<f64> {
        self.grads
            .get(&t.id())
            .cloned()
            .unwrap_or_else(|| vec![0.0; t.len()])
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Post-order (inputs before outputs) over the recorded graph.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    enum Visit {
        Enter(Tensor),
        Exit(Tensor),
    }
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    let mut stack = vec![Visit::Enter(root.clone())];
    while let Some(v) = stack.pop() {
        match v {
            Visit::Enter(t) => {
                if !seen.insert(t.id()) {
                    continue;
                }
                stack.push(Visit::Exit(t.clone()));
                for child in t.step_inputs() {
                    if child.needs_grad() && !seen.contains(&child.id()) {
                        stack.push(Visit::Enter(child));
                    }
                }
            }
            Visit::Exit(t) => order.push(t),
        }
    }
    order
}

/// Differentiate a scalar loss with respect to every reachable parameter.
pub fn backward(loss: &Tensor) -> Result<GradientMap> {
    if loss.len() != 1 {
        return Err(Error::invalid(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    let mut table: HashMap<u64, Vec<f64>> = HashMap::new();
    let mut leaves: HashMap<u64, Vec<f64>> = HashMap::new();
    if !loss.needs_grad() {
        // Constant loss: nothing depends on any parameter.
        return Ok(GradientMap { grads: leaves });
    }
    table.insert(loss.id(), vec![1.0]);
    let order = topo_order(loss);
    for t in order.iter().rev() {
        let Some(dy) = table.remove(&t.id()) else {
            continue;
        };
        let step = t.cell.step.borrow();
        match &*step {
            Some(step) => {
                let out = t.data();
                let grads = (step.vjp)(&dy, &step.inputs, &out);
                debug_assert_eq!(grads.len(), step.inputs.len());
                for (inp, g) in step.inputs.iter().zip(grads) {
                    let Some(g) = g else { continue };
                    if !inp.needs_grad() {
                        continue;
                    }
                    debug_assert_eq!(g.len(), inp.len(), "vjp length in op {}", step.op);
                    table
                        .entry(inp.id())
                        .and_modify(|acc| {
                            for (a, b) in acc.iter_mut().zip(&g) {
                                *a += b;
                            }
                        })
                        .or_insert(g);
                }
            }
            None => {
                if t.is_parameter() {
                    t.set_grad(dy.clone());
                    leaves.insert(t.id(), dy);
                }
            }
        }
    }
    Ok(GradientMap { grads: leaves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ops;

    #[test]
    fn sum_gradient_is_ones() {
        let p = Tensor::from_vec(&[3], vec![1.0, -2.0, 5.0]).unwrap().requires_grad();
        let loss = ops::sum_all(&p);
        let g = backward(&loss).unwrap();
        assert_eq!(g.get(&p).unwrap(), &[1.0, 1.0, 1.0]);
        assert_eq!(p.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn mean_of_square_gradient() {
        // loss = mean(p^2), d/dp = 2p/n = p for n=2 entries [1, 2] -> [1, 2]
        let p = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap().requires_grad();
        let sq = ops::mul(&p, &p).unwrap();
        let loss = ops::mean_all(&sq);
        let g = backward(&loss).unwrap();
        assert_eq!(g.get(&p).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn detached_parameter_reads_as_zero() {
        let p = Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap().requires_grad();
        let q = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap().requires_grad();
        let loss = ops::sum_all(&q);
        let g = backward(&loss).unwrap();
        assert!(g.get(&p).is_none());
        assert_eq!(g.get_or_zeros(&p), vec![0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let p = Tensor::zeros(&[2]).requires_grad();
        let y = ops::scale(&p, 2.0);
        assert!(backward(&y).is_err());
    }

    #[test]
    fn shared_operand_accumulates() {
        // loss = sum(p * p) uses p twice; gradient must be 2p.
        let p = Tensor::from_vec(&[2], vec![3.0, -1.0]).unwrap().requires_grad();
        let loss = ops::sum_all(&ops::mul(&p, &p).unwrap());
        let g = backward(&loss).unwrap();
        assert_eq!(g.get(&p).unwrap(), &[6.0, -2.0]);
    }

    #[test]
    fn constant_loss_yields_empty_map() {
        let c = Tensor::scalar(7.0);
        let g = backward(&c).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn backward_replaces_stale_grads() {
        let p = Tensor::from_vec(&[1], vec![2.0]).unwrap().requires_grad();
        let l1 = ops::sum_all(&ops::scale(&p, 3.0));
        backward(&l1).unwrap();
        assert_eq!(p.grad().unwrap(), vec![3.0]);
        let l2 = ops::sum_all(&ops::scale(&p, 5.0));
        backward(&l2).unwrap();
        assert_eq!(p.grad().unwrap(), vec![5.0]);
    }
}

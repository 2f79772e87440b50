//! Dense row-major tensors with an optional recorded backward step.
//!
//! A `Tensor` is a cheap `Rc` handle. Leaves are created directly (data,
//! parameters); every primitive in [`super::ops`] produces a new tensor and,
//! when any input participates in differentiation, records a vector-Jacobian
//! product so [`super::backward`] can replay the graph in reverse.
//!
//! All values are `f64`. Single-threaded by design: graphs are `Rc`-linked
//! and never shared across threads.

use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Vector-Jacobian product: `(upstream, inputs, output_values) -> per-input grads`.
/// `None` entries mark inputs that never receive gradient (e.g. integer-like
/// constants baked into an op).
pub(crate) type Vjp = Box<dyn Fn(&[f64], &[Tensor], &[f64]) -> Vec<Option<Vec<f64>>>>;

pub(crate) struct BackwardStep {
    pub op: &'static str,
    pub inputs: Vec<Tensor>,
    pub vjp: Vjp,
}

pub struct TensorCell {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: Cell<bool>,
    name: RefCell<Option<String>>,
    pub(crate) step: RefCell<Option<BackwardStep>>,
}

#[derive(Clone)]
pub struct Tensor {
    pub(crate) cell: Rc<TensorCell>,
}

impl Tensor {
    fn new_cell(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor {
            cell: Rc::new(TensorCell {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(false),
                name: RefCell::new(None),
                step: RefCell::new(None),
            }),
        }
    }

    /// Constant tensor from explicit shape and row-major data.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!(
                "tensor shape {:?} wants {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor::new_cell(shape.to_vec(), data))
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new_cell(vec![1], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new_cell(shape.to_vec(), vec![0.0; n])
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new_cell(shape.to_vec(), vec![v; n])
    }

    /// Standard-normal draws, row-major.
    pub fn randn<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::new_cell(shape.to_vec(), data)
    }

    /// Uniform draws on `[lo, hi)`, row-major.
    pub fn rand_uniform<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::new_cell(shape.to_vec(), data)
    }

    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: Vec<Tensor>,
        vjp: Vjp,
    ) -> Tensor {
        let out = Tensor::new_cell(shape, data);
        if inputs.iter().any(Tensor::needs_grad) {
            *out.cell.step.borrow_mut() = Some(BackwardStep { op, inputs, vjp });
        }
        out
    }

    /// Mark this leaf as a trainable parameter (or un-mark it to freeze).
    pub fn set_requires_grad(&self, yes: bool) {
        self.cell.requires_grad.set(yes);
    }

    /// Builder form of [`set_requires_grad`] for leaf construction.
    pub fn requires_grad(self) -> Tensor {
        self.set_requires_grad(true);
        self
    }

    pub fn is_parameter(&self) -> bool {
        self.cell.requires_grad.get()
    }

    /// True when gradients must flow through this tensor: it is either a
    /// parameter leaf or the output of a recorded op.
    pub fn needs_grad(&self) -> bool {
        self.cell.requires_grad.get() || self.cell.step.borrow().is_some()
    }

    pub fn id(&self) -> u64 {
        self.cell.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.cell.shape
    }

    pub fn len(&self) -> usize {
        self.cell.data.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.cell.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.cell.data.borrow().clone()
    }

    /// Value of a scalar (single-element) tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.cell.data.borrow()[0]
    }

    /// Overwrite the stored values in place (optimizer updates, state loads).
    /// Length must match.
    pub fn set_data(&self, values: &[f64]) {
        let mut d = self.cell.data.borrow_mut();
        assert_eq!(d.len(), values.len(), "set_data length mismatch");
        d.copy_from_slice(values);
    }

    /// Apply `f` to the stored values in place.
    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.cell.data.borrow_mut());
    }

    /// Gradient recorded by the most recent backward pass, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.cell.grad.borrow().clone()
    }

    pub(crate) fn set_grad(&self, g: Vec<f64>) {
        *self.cell.grad.borrow_mut() = Some(g);
    }

    pub fn clear_grad(&self) {
        *self.cell.grad.borrow_mut() = None;
    }

    pub fn name(&self) -> Option<String> {
        self.cell.name.borrow().clone()
    }

    pub fn set_name(&self, name: impl Into<String>) {
        *self.cell.name.borrow_mut() = Some(name.into());
    }

    /// Named parameter leaf, initialized from the given values.
    pub fn parameter(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::from_vec(shape, data)?.requires_grad();
        t.set_name(name);
        Ok(t)
    }

    /// A constant copy of the current values, detached from the graph.
    pub fn detached(&self) -> Tensor {
        Tensor::new_cell(self.cell.shape.clone(), self.to_vec())
    }

    pub fn all_finite(&self) -> bool {
        self.cell.data.borrow().iter().all(|v| v.is_finite())
    }

    pub(crate) fn step_inputs(&self) -> Vec<Tensor> {
        self.cell
            .step
            .borrow()
            .as_ref()
            .map(|s| s.inputs.clone())
            .unwrap_or_default()
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let d = self.cell.data.borrow();
        let head: Vec<f64> = d.iter().take(8).copied().collect();
        write!(
            f,
            "Tensor(id={}, shape={:?}, data[..{}]={:?}{})",
            self.cell.id,
            self.cell.shape,
            head.len(),
            head,
            if d.len() > 8 { ", ..." } else { "" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn leaf_flags() {
        let t = Tensor::zeros(&[2, 2]);
        assert!(!t.needs_grad());
        let p = t.requires_grad();
        assert!(p.needs_grad());
        p.set_requires_grad(false);
        assert!(!p.needs_grad());
    }

    #[test]
    fn randn_is_seeded() {
        let mut a = crate::seeding::stream(7, "t");
        let mut b = crate::seeding::stream(7, "t");
        let x = Tensor::randn(&[3, 3], &mut a);
        let y = Tensor::randn(&[3, 3], &mut b);
        assert_eq!(x.to_vec(), y.to_vec());
    }
}

//! Minimal reverse-mode differentiable tensor engine.
//!
//! A [`Tensor`] is a reference-counted node holding an `f32` buffer in
//! row-major order. Ops build new nodes that remember their parents and a
//! backward closure; [`Tensor::backward`] walks the graph in reverse
//! topological order and accumulates gradients into every reachable node that
//! requires them. Parameters are leaves created with [`Tensor::param`] and
//! mutated in place by the optimizer.

mod conv;
pub mod gradcheck;
pub mod init;
mod norm;
mod ops;
pub mod optim;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use conv::{conv1d, conv2d, conv_transpose2d, Conv2dGeometry};
pub use norm::{batch_norm, BatchNormState, NormMode};
pub use ops::*;

type BackwardFn = Box<dyn Fn(&[f32])>;

struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    grad: RefCell<Option<Vec<f32>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Differentiable n-dimensional `f32` array.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording backward closures.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(
        data: Vec<f32>,
        shape: Vec<usize>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents,
            backward,
        }))
    }

    fn check_shape(data_len: usize, shape: &[usize]) -> Result<()> {
        if shape.contains(&0) {
            return Err(Error::shape(format!("dims must be positive, got {shape:?}")));
        }
        if numel(shape) != data_len {
            return Err(Error::shape(format!(
                "buffer of {} values does not fit shape {:?}",
                data_len, shape
            )));
        }
        Ok(())
    }

    /// Constant (non-differentiable) tensor.
    pub fn new(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        Self::check_shape(data.len(), shape)?;
        Ok(Self::build(data, shape.to_vec(), false, Vec::new(), None))
    }

    /// Leaf tensor whose gradient is tracked.
    pub fn param(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        Self::check_shape(data.len(), shape)?;
        Ok(Self::build(data, shape.to_vec(), true, Vec::new(), None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(vec![0.0; numel(shape)], shape.to_vec(), false, Vec::new(), None)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self::build(vec![value; numel(shape)], shape.to_vec(), false, Vec::new(), None)
    }

    pub fn scalar(value: f32) -> Self {
        Self::build(vec![value], vec![1], false, Vec::new(), None)
    }

    /// Result node of an op. The closure receives this node's gradient and is
    /// responsible for accumulating into the parents; it is dropped when no
    /// parent needs a gradient or recording is disabled.
    pub(crate) fn from_op(
        data: Vec<f32>,
        shape: Vec<usize>,
        parents: &[&Tensor],
        backward: impl Fn(&[f32]) + 'static,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            let parents = parents.iter().map(|&p| p.clone()).collect();
            Self::build(data, shape, true, parents, Some(Box::new(backward)))
        } else {
            Self::build(data, shape, false, Vec::new(), None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn len(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        self.0.data.borrow()[0]
    }

    /// Overwrites the values in place. Shape must be preserved.
    pub fn set_data(&self, values: &[f32]) -> Result<()> {
        let mut data = self.0.data.borrow_mut();
        if values.len() != data.len() {
            return Err(Error::shape(format!(
                "cannot assign {} values to tensor of shape {:?}",
                values.len(),
                self.0.shape
            )));
        }
        data.copy_from_slice(values);
        Ok(())
    }

    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [f32])) {
        f(&mut self.0.data.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.borrow().clone()
    }

    pub(crate) fn grad_ref(&self) -> Ref<'_, Option<Vec<f32>>> {
        self.0.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f32]) {
        if !self.0.requires_grad {
            return;
        }
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Like [`accumulate_grad`](Self::accumulate_grad) but computes the
    /// contribution lazily, skipping the work for non-tracked parents.
    pub(crate) fn accumulate_with(&self, f: impl FnOnce() -> Vec<f32>) {
        if self.0.requires_grad {
            let g = f();
            self.accumulate_grad(&g);
        }
    }

    /// A new constant leaf sharing no graph history with `self`.
    pub fn detach(&self) -> Tensor {
        Self::build(self.to_vec(), self.0.shape.clone(), false, Vec::new(), None)
    }

    /// Backpropagates from a single-element tensor.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::shape(format!(
                "backward() needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        self.backward_with(&[1.0])
    }

    /// Backpropagates with an explicit seed gradient of the same shape.
    pub fn backward_with(&self, seed: &[f32]) -> Result<()> {
        if seed.len() != self.len() {
            return Err(Error::shape(format!(
                "seed gradient has {} values, tensor has shape {:?}",
                seed.len(),
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        self.accumulate_grad(seed);
        for node in order.iter().rev() {
            let Some(backward) = node.0.backward.as_ref() else {
                continue;
            };
            // Interior gradients are consumed once; leaves keep theirs.
            let g = node.0.grad.borrow_mut().take();
            if let Some(g) = g {
                backward(&g);
            }
        }
        Ok(())
    }

    /// Post-order over tracked nodes reachable from `self`.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(Rc::as_ptr(&t.0)) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.0.parents {
                if p.requires_grad() && !seen.contains(&Rc::as_ptr(&p.0)) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

impl Drop for Node {
    // Long graphs would otherwise drop recursively, one stack frame per node.
    fn drop(&mut self) {
        self.backward.take();
        let mut pending = std::mem::take(&mut self.parents);
        while let Some(t) = pending.pop() {
            if let Ok(mut node) = Rc::try_unwrap(t.0) {
                node.backward.take();
                pending.append(&mut node.parents);
            }
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<f32> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("values", &preview)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![1.0; 5], &[2, 3]).is_err());
        assert!(Tensor::new(vec![], &[0]).is_err());
    }

    #[test]
    fn shared_leaf_accumulates_both_paths() {
        let x = Tensor::param(vec![1.5, -2.0], &[2]).unwrap();
        let a = mul_scalar(&x, 3.0);
        let b = mul(&x, &x).unwrap();
        let y = sum(&add(&a, &b).unwrap());
        y.backward().unwrap();
        // d/dx (3x + x^2) = 3 + 2x
        assert_eq!(x.grad().unwrap(), vec![6.0, -1.0]);
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = no_grad(|| sum(&mul_scalar(&x, 2.0)));
        assert!(!y.requires_grad());
        assert!(grad_enabled());
    }

    #[test]
    fn backward_needs_scalar() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = mul_scalar(&x, 2.0);
        assert!(y.backward().is_err());
    }

    #[test]
    fn deep_chain_does_not_overflow_stack() {
        let x = Tensor::param(vec![1.0], &[1]).unwrap();
        let mut y = x.clone();
        for _ in 0..20_000 {
            y = add_scalar(&y, 1e-4);
        }
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0]);
    }
}

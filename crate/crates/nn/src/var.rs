//! Reverse-mode automatic differentiation over a dynamically built graph.
//!
//! Every op returns a fresh [`Var`]. Nodes that do not depend on any
//! gradient-requiring leaf keep no parents, so inference graphs free their
//! intermediates as soon as they go out of scope.

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::{Scalar, Tensor};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Backward rule of one op. `grad` is dL/d(output); implementations push
/// contributions into their parents with [`Var::accumulate_grad`].
pub(crate) trait Backward<T: Scalar> {
    fn parents(&self) -> Vec<&Var<T>>;
    fn backward(&self, output: &Tensor<T>, grad: &Tensor<T>);
}

pub(crate) struct Node<T: Scalar> {
    id: u64,
    value: Tensor<T>,
    grad: RefCell<Option<Tensor<T>>>,
    requires_grad: bool,
    op: Option<Box<dyn Backward<T>>>,
}

/// Handle to a value in the computation graph.
pub struct Var<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    /// A value that never receives gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Var(Rc::new(Node { id: next_id(), value, grad: RefCell::new(None), requires_grad: false, op: None }))
    }

    /// A leaf whose gradient is accumulated by [`Var::backward`].
    pub fn leaf(value: Tensor<T>) -> Self {
        Var(Rc::new(Node { id: next_id(), value, grad: RefCell::new(None), requires_grad: true, op: None }))
    }

    /// Result of an op. Parents are only retained if gradient can flow.
    pub(crate) fn from_op(value: Tensor<T>, op: impl Backward<T> + 'static) -> Self {
        let requires_grad = op.parents().iter().any(|p| p.requires_grad());
        let op: Option<Box<dyn Backward<T>>> = if requires_grad { Some(Box::new(op)) } else { None };
        Var(Rc::new(Node { id: next_id(), value, grad: RefCell::new(None), requires_grad, op }))
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn take_grad(&self) -> Option<Tensor<T>> {
        self.0.grad.borrow_mut().take()
    }

    /// Detached copy sharing the same storage.
    pub fn detach(&self) -> Self {
        Var::constant(self.0.value.clone())
    }

    pub(crate) fn accumulate_grad(&self, g: Tensor<T>) {
        if !self.requires_grad() {
            return;
        }
        debug_assert_eq!(g.shape(), self.shape(), "gradient shape mismatch");
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.add_assign(&g),
            None => *slot = Some(g),
        }
    }

    /// Backpropagate from a single-element output.
    pub fn backward(&self) {
        assert_eq!(self.value().len(), 1, "backward() needs a scalar output");
        self.backward_with(Tensor::full(self.shape().to_vec(), T::one()));
    }

    /// Backpropagate an explicit upstream gradient.
    pub fn backward_with(&self, seed: Tensor<T>) {
        if !self.requires_grad() {
            return;
        }
        // Ids grow with creation order, so descending id is a valid
        // reverse topological order.
        let mut nodes: Vec<Var<T>> = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !seen.insert(v.0.id) {
                continue;
            }
            if let Some(op) = &v.0.op {
                for p in op.parents() {
                    if p.requires_grad() && !seen.contains(&p.0.id) {
                        stack.push(p.clone());
                    }
                }
            }
            nodes.push(v);
        }
        nodes.sort_by(|a, b| b.0.id.cmp(&a.0.id));
        self.accumulate_grad(seed);
        for v in &nodes {
            let Some(op) = &v.0.op else { continue };
            // Interior gradients are consumed; leaves keep theirs.
            let Some(g) = v.0.grad.borrow_mut().take() else { continue };
            op.backward(&v.0.value, &g);
        }
    }
}

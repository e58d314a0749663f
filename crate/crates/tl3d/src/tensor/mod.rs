//! Reverse-mode autodiff over dense f64 arrays.
//!
//! A [`Tensor`] is a cheap handle onto a graph node. Ops allocate a new node
//! whose backward closure captures its parent handles; calling
//! [`Tensor::backward`] on a scalar output walks the graph in reverse
//! topological order and accumulates `grad` buffers on every node that
//! requires gradients. Graphs are rebuilt every step and freed when the
//! output handle drops.
//!
//! Everything is double precision. Construction and backward are
//! single-threaded; evaluation with [`no_grad`] records nothing, so
//! inference loops do not retain intermediates.

mod gradcheck;
mod ops;
pub mod optim;

pub use gradcheck::{gradcheck, gradcheck_subset, GradcheckReport};
pub(crate) use ops::sigmoid_scalar;

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::rng::Rng;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(1) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// True while graph recording is active on this thread.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Run `f` without recording any graph; intermediates are freed eagerly.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    let out = f();
    GRAD_ENABLED.with(|c| c.set(prev));
    out
}

type BackwardFn = Box<dyn Fn(&[f64], &[f64], &[Tensor])>;

pub(crate) struct Node {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    /// Called with (output data, output grad, parents); accumulates into the
    /// parent tensors. Closures must not capture Tensor handles — graph
    /// edges live only in `parents`, which keeps drops iterative.
    backward: Option<BackwardFn>,
}

impl Drop for Node {
    // Unlink long graph chains iteratively so dropping a deep graph does
    // not recurse once per node.
    fn drop(&mut self) {
        let mut stack = std::mem::take(&mut self.parents);
        while let Some(mut t) = stack.pop() {
            if let Some(node) = Rc::get_mut(&mut t.0) {
                stack.append(&mut std::mem::take(&mut node.parents));
            }
        }
    }
}

/// Handle onto an autodiff graph node.
#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Node>);

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn shape_str(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", dims.join("x"))
}

impl Tensor {
    fn leaf(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        let numel: usize = shape.iter().product();
        assert!(
            numel == data.len(),
            "tensor data length {} does not match shape {}",
            data.len(),
            shape_str(&shape)
        );
        Tensor(Rc::new(Node {
            id: fresh_id(),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Tensor {
        Tensor::leaf(data, shape.to_vec(), false)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::leaf(vec![v], vec![1], false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::leaf(vec![0.0; shape.iter().product()], shape.to_vec(), false)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        Tensor::leaf(vec![v; shape.iter().product()], shape.to_vec(), false)
    }

    /// Trainable leaf.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Tensor {
        Tensor::leaf(data, shape.to_vec(), true)
    }

    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec((0..n).map(|_| rng.normal() * std).collect(), shape)
    }

    /// New op node. Records the backward closure only while grad mode is on
    /// and some parent participates in differentiation.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f64], &[f64], &[Tensor]) + 'static,
    ) -> Tensor {
        let numel: usize = shape.iter().product();
        assert!(
            numel == data.len(),
            "op output length {} does not match shape {}",
            data.len(),
            shape_str(&shape)
        );
        let track = grad_enabled() && parents.iter().any(|p| p.0.requires_grad);
        if track {
            Tensor(Rc::new(Node {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: true,
                parents,
                backward: Some(Box::new(backward)),
            }))
        } else {
            Tensor::leaf(data, shape, false)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Copy of the value buffer.
    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert!(
            self.numel() == 1,
            "item() on tensor of shape {}",
            shape_str(&self.0.shape)
        );
        self.0.data.borrow()[0]
    }

    /// Read access without copying.
    pub fn with_data<T>(&self, f: impl FnOnce(&[f64]) -> T) -> T {
        f(&self.0.data.borrow())
    }

    /// Overwrite the value buffer in place (optimizer updates, finite
    /// differences). Length must match.
    pub fn set_data(&self, data: &[f64]) {
        let mut d = self.0.data.borrow_mut();
        assert!(
            d.len() == data.len(),
            "set_data length {} does not match shape {}",
            data.len(),
            shape_str(&self.0.shape)
        );
        d.copy_from_slice(data);
    }

    /// Mutate the value buffer in place.
    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.0.data.borrow_mut());
    }

    /// Copy of the gradient buffer, if one was accumulated.
    pub fn grad_vec(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Detached constant copy of this tensor's current value.
    pub fn detach(&self) -> Tensor {
        Tensor::from_vec(self.to_vec(), &self.0.shape)
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        if !self.0.requires_grad {
            return;
        }
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (b, gi) in buf.iter_mut().zip(g) {
                    *b += gi;
                }
            }
            None => {
                *slot = Some(g.to_vec());
            }
        }
    }

    /// Acquire (allocating if needed) this tensor's grad buffer; no-op when
    /// the tensor does not require gradients. For custom-op backward rules.
    pub(crate) fn with_grad(&self, f: impl FnOnce(&mut [f64])) {
        if !self.0.requires_grad {
            return;
        }
        let mut slot = self.0.grad.borrow_mut();
        if slot.is_none() {
            *slot = Some(vec![0.0; self.numel()]);
        }
        f(slot.as_mut().unwrap());
    }

    /// Reverse-mode sweep from a scalar output. Accumulates into the `grad`
    /// buffer of every reachable node with `requires_grad`.
    pub fn backward(&self) {
        assert!(
            self.numel() == 1,
            "backward() requires a scalar output, got shape {}",
            shape_str(&self.0.shape)
        );
        let order = topo_order(self);
        self.accumulate_grad(&[1.0]);
        for node in order.iter().rev() {
            if let Some(back) = &node.0.backward {
                let grad_ref = node.0.grad.borrow();
                if let Some(g) = grad_ref.as_ref() {
                    let data_ref = node.0.data.borrow();
                    back(&data_ref, g, &node.0.parents);
                }
            }
        }
    }

    /// True if every element is finite.
    pub fn all_finite(&self) -> bool {
        self.0.data.borrow().iter().all(|v| v.is_finite())
    }
}

/// Iterative post-order DFS over parents; returns nodes in topological
/// order (parents before children).
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    // (tensor, child_cursor) stack
    let mut stack: Vec<(Tensor, usize)> = Vec::new();
    if root.0.requires_grad {
        visited.insert(root.0.id);
        stack.push((root.clone(), 0));
    }
    while let Some((t, cursor)) = stack.pop() {
        if cursor < t.0.parents.len() {
            let parent = t.0.parents[cursor].clone();
            stack.push((t, cursor + 1));
            if parent.0.requires_grad && visited.insert(parent.0.id) {
                stack.push((parent, 0));
            }
        } else {
            order.push(t);
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_chain_backward() {
        // f(x) = sum((2x + 1)^2), df/dx = 4(2x+1)
        let x = Tensor::param(vec![1.0, -2.0, 0.5], &[3]);
        let y = x.scale(2.0).add_scalar(1.0);
        let loss = y.mul(&y).sum_all();
        loss.backward();
        let g = x.grad_vec().unwrap();
        for (xi, gi) in x.to_vec().iter().zip(&g) {
            assert!((gi - 4.0 * (2.0 * xi + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn reused_node_accumulates_both_paths() {
        // f = sum(x*x) + sum(x), df/dx = 2x + 1
        let x = Tensor::param(vec![3.0, -1.0], &[2]);
        let loss = x.mul(&x).sum_all().add(&x.sum_all());
        loss.backward();
        let g = x.grad_vec().unwrap();
        assert!((g[0] - 7.0).abs() < 1e-12);
        assert!((g[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Tensor::param(vec![1.0], &[1]);
        let y = no_grad(|| x.scale(3.0));
        assert!(!y.requires_grad());
        assert!(y.0.parents.is_empty());
    }

    #[test]
    fn constants_do_not_join_the_graph() {
        let c = Tensor::from_vec(vec![1.0, 2.0], &[2]);
        let d = c.scale(2.0);
        assert!(!d.requires_grad());
    }

    #[test]
    #[should_panic(expected = "backward() requires a scalar output")]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]);
        x.scale(1.0).backward();
    }

    #[test]
    fn deep_graph_does_not_overflow_stack() {
        let x = Tensor::param(vec![1.0], &[1]);
        let mut y = x.clone();
        for _ in 0..50_000 {
            y = y.add_scalar(0.0);
        }
        y.sum_all().backward();
        assert!((x.grad_vec().unwrap()[0] - 1.0).abs() < 1e-12);
    }
}

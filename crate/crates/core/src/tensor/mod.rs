//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Values are row-major `Vec<f64>` buffers behind shared handles. Every
//! operation that touches a grad-requiring input records a tape node
//! (backward rule + parent handles); `backward` replays the recorded graph
//! in reverse topological order. Gradients accumulate into `grad`, so two
//! backward passes over the same graph yield exactly twice the gradient.
//!
//! Handles are `Rc`-based and single-threaded by design: a graph is built,
//! differentiated and dropped on one thread. Independent model replicas
//! (e.g. per cross-validation fold) each build their own graphs.

mod conv;
mod nn;
mod ops;
mod pool;

pub use conv::{conv1d, conv1d_out_len, depthwise_conv_channels, ConvSpec};
pub use nn::{dropout, elu, linear, log_softmax};
pub use ops::{
    add, add_scalar, broadcast_channel, broadcast_groups, clamp_min, concat_channels, div,
    mean_all, mul, mul_scalar, neg, reshape, segment_mean, sqrt, sub, sum_all, sum_cols,
    transpose_12,
};
pub use pool::{avg_pool1d, avg_pool1d_same, global_avg_pool, pad1d};

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Error, Result};

pub(crate) trait GradRule {
    fn op_name(&self) -> &'static str;
    /// Gradient contribution for each parent. Slots where `needs[i]` is
    /// false may be `None`; everything else must be a buffer shaped like
    /// the corresponding parent.
    fn backward(&self, grad_out: &[f64], parents: &[Tensor], needs: &[bool])
        -> Vec<Option<Vec<f64>>>;
}

struct Node {
    rule: Box<dyn GradRule>,
    parents: Vec<Tensor>,
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    /// Transient buffer used while a backward pass is in flight.
    pending: Option<Vec<f64>>,
    node: Option<Node>,
}

/// Shared handle to an n-dimensional f64 array, optionally tracked for
/// gradients. Cloning a `Tensor` clones the handle, not the storage.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .field("op", &inner.node.as_ref().map(|n| n.rule.op_name()))
            .finish()
    }
}

impl Tensor {
    /// Plain (untracked) tensor.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                data,
                requires_grad: false,
                grad: None,
                pending: None,
                node: None,
            })),
        }
    }

    /// Gradient-tracked leaf (a trainable parameter).
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        let t = Tensor::new(shape, data);
        t.inner.borrow_mut().requires_grad = true;
        t
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v])
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        rule: Box<dyn GradRule>,
        parents: Vec<Tensor>,
    ) -> Tensor {
        let requires = parents.iter().any(|p| p.requires_grad());
        let t = Tensor::new(shape, data);
        if requires {
            let mut inner = t.inner.borrow_mut();
            inner.requires_grad = true;
            inner.node = Some(Node { rule, parents });
        }
        t
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    /// Borrow the underlying buffer. Short-lived borrows only.
    pub fn data(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |i| i.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        assert_eq!(inner.data.len(), 1, "item() on non-scalar");
        inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, on: bool) {
        self.inner.borrow_mut().requires_grad = on;
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Overwrite the value buffer in place (same length). Used by optimizers.
    pub fn set_data(&self, data: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.data.len(), data.len());
        inner.data.copy_from_slice(data);
    }

    /// Mutate one element in place. Used by finite-difference checks.
    pub fn nudge(&self, index: usize, delta: f64) {
        let mut inner = self.inner.borrow_mut();
        inner.data[index] += delta;
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    fn add_pending(&self, contribution: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        match inner.pending.as_mut() {
            Some(buf) => {
                for (b, c) in buf.iter_mut().zip(contribution) {
                    *b += c;
                }
            }
            None => inner.pending = Some(contribution.to_vec()),
        }
    }

    /// Reverse-mode differentiation from a scalar loss.
    ///
    /// Accumulates into `grad` of every reachable grad-requiring tensor.
    /// The graph is left intact; calling this twice doubles the gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward() requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Contract(
                "backward() on a tensor with no recorded tape".into(),
            ));
        }

        // Post-order over the grad-requiring subgraph: parents precede users.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        enum Step {
            Enter(Tensor),
            Exit(Tensor),
        }
        let mut stack = vec![Step::Enter(self.clone())];
        while let Some(step) = stack.pop() {
            match step {
                Step::Enter(t) => {
                    if !visited.insert(t.key()) {
                        continue;
                    }
                    stack.push(Step::Exit(t.clone()));
                    let inner = t.inner.borrow();
                    if let Some(node) = &inner.node {
                        for p in &node.parents {
                            if p.requires_grad() {
                                stack.push(Step::Enter(p.clone()));
                            }
                        }
                    }
                }
                Step::Exit(t) => order.push(t),
            }
        }

        self.inner.borrow_mut().pending = Some(vec![1.0]);

        for t in order.iter().rev() {
            let pending = match t.inner.borrow_mut().pending.take() {
                Some(p) => p,
                None => continue,
            };
            {
                let mut inner = t.inner.borrow_mut();
                if inner.requires_grad {
                    match inner.grad.as_mut() {
                        Some(g) => {
                            for (gi, pi) in g.iter_mut().zip(&pending) {
                                *gi += pi;
                            }
                        }
                        None => inner.grad = Some(pending.clone()),
                    }
                }
            }
            let (contributions, parents) = {
                let inner = t.inner.borrow();
                match &inner.node {
                    Some(node) => {
                        let needs: Vec<bool> =
                            node.parents.iter().map(|p| p.requires_grad()).collect();
                        let contrib = node.rule.backward(&pending, &node.parents, &needs);
                        (contrib, node.parents.clone())
                    }
                    None => continue,
                }
            };
            for (parent, contribution) in parents.iter().zip(contributions) {
                if let Some(c) = contribution {
                    if parent.requires_grad() {
                        debug_assert_eq!(c.len(), parent.numel());
                        parent.add_pending(&c);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Sum of values in a total order independent of input order.
///
/// f64 addition commutes but does not associate; sorting before the fold
/// makes set-style reductions bitwise invariant under permutation of their
/// inputs.
pub(crate) fn sorted_sum(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values.iter().sum()
}

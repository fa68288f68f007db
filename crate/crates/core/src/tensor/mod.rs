//! Minimal reverse-mode autodiff tensor engine.
//!
//! A [`Tape`] records every primitive applied to its [`Tensor`]s; calling
//! [`Tensor::backward`] on a scalar loss walks the tape in reverse and
//! accumulates gradients by the chain rule. Values are 64-bit floats,
//! row-major. A tape and its tensors are confined to one thread during a
//! training step; parallelism happens over independent tapes.
//!
//! Shape mismatches are programming errors and panic with a message naming
//! the primitive and both shapes.

pub mod nn;
pub mod ops;
pub mod optim;

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

/// Gradient contributions flowing to parent nodes: (parent id, same-shape grad).
type BackFn = Box<dyn Fn(&[f64]) -> Vec<(usize, Vec<f64>)>>;

struct Node {
    values: Rc<Vec<f64>>,
    grad: Vec<f64>,
    back: Option<BackFn>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    grads_valid: bool,
}

/// A differentiation tape. Cloning yields another handle to the same tape.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// A value on a tape: shape plus node identity. Cloning is cheap.
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    id: usize,
    shape: Vec<usize>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record a constant (no gradient flows into it).
    pub fn constant(&self, values: Vec<f64>, shape: &[usize]) -> Tensor {
        self.push(shape.to_vec(), values, None)
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.constant(vec![v], &[])
    }

    pub fn zeros(&self, shape: &[usize]) -> Tensor {
        self.constant(vec![0.0; numel(shape)], shape)
    }

    pub(crate) fn push(&self, shape: Vec<usize>, values: Vec<f64>, back: Option<BackFn>) -> Tensor {
        assert_eq!(
            numel(&shape),
            values.len(),
            "tensor: values length {} does not match shape {:?}",
            values.len(),
            shape
        );
        let mut inner = self.inner.borrow_mut();
        inner.grads_valid = false;
        let id = inner.nodes.len();
        let len = values.len();
        inner.nodes.push(Node {
            values: Rc::new(values),
            grad: vec![0.0; len],
            back,
        });
        Tensor {
            tape: self.clone(),
            id,
            shape,
        }
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub(crate) fn id(&self) -> usize {
        self.id
    }

    /// Snapshot of this tensor's forward value.
    pub fn values(&self) -> Rc<Vec<f64>> {
        Rc::clone(&self.tape.inner.borrow().nodes[self.id].values)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values().as_ref().clone()
    }

    /// Value of a scalar-shaped tensor.
    pub fn scalar_value(&self) -> f64 {
        assert_eq!(
            self.numel(),
            1,
            "scalar_value: tensor has shape {:?}",
            self.shape
        );
        self.values()[0]
    }

    /// Gradient of the last backward pass, if one has run on this tape.
    pub fn grad(&self) -> Option<Vec<f64>> {
        let inner = self.tape.inner.borrow();
        if inner.grads_valid {
            Some(inner.nodes[self.id].grad.clone())
        } else {
            None
        }
    }

    pub(crate) fn assert_same_tape(&self, other: &Tensor, op: &str) {
        assert!(
            self.tape.same_tape(&other.tape),
            "{op}: operands live on different tapes"
        );
    }

    /// Reverse pass from a scalar loss. Every reachable node's grad is set to
    /// d(loss)/d(node); unreachable nodes keep zeros. The loss's own grad is
    /// exactly 1.0. Deterministic: iteration order is fixed by node ids.
    pub fn backward(&self) {
        assert_eq!(
            self.numel(),
            1,
            "backward: loss must be scalar-shaped, got {:?}",
            self.shape
        );
        let inner = &mut *self.tape.inner.borrow_mut();
        for node in inner.nodes.iter_mut() {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        inner.nodes[self.id].grad[0] = 1.0;
        for id in (0..=self.id).rev() {
            if inner.nodes[id].back.is_none() {
                continue;
            }
            if inner.nodes[id].grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            let gout = inner.nodes[id].grad.clone();
            let contribs = inner.nodes[id].back.as_ref().unwrap()(&gout);
            for (pid, g) in contribs {
                debug_assert!(pid < id, "backonly flows to earlier nodes");
                let pg = &mut inner.nodes[pid].grad;
                assert_eq!(pg.len(), g.len(), "backward: contribution shape mismatch");
                for (a, b) in pg.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        inner.grads_valid = true;
    }
}

// ── Parameters ───────────────────────────────────────────────────────

static PARAM_COUNTER: AtomicU64 = AtomicU64::new(0);

/// A trainable parameter: persistent value outside any tape, bound onto a
/// tape per step via [`Ctx::var`].
#[derive(Debug, Clone)]
pub struct Param {
    uid: u64,
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: &[usize], value: Vec<f64>) -> Self {
        assert_eq!(
            numel(shape),
            value.len(),
            "param: value length does not match shape"
        );
        Param {
            uid: PARAM_COUNTER.fetch_add(1, Ordering::Relaxed),
            name: name.into(),
            shape: shape.to_vec(),
            value,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, shape, vec![0.0; numel(shape)])
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Per-step forward context: a fresh tape plus the bindings from parameters
/// to their leaf tensors, so each parameter appears on the tape once.
pub struct Ctx {
    pub tape: Tape,
    bound: HashMap<u64, Tensor>,
}

impl Ctx {
    pub fn new() -> Self {
        Ctx {
            tape: Tape::new(),
            bound: HashMap::new(),
        }
    }

    /// Bind a parameter onto the tape (idempotent per parameter).
    pub fn var(&mut self, p: &Param) -> Tensor {
        if let Some(t) = self.bound.get(&p.uid) {
            return t.clone();
        }
        let t = self.tape.constant(p.value.clone(), &p.shape);
        self.bound.insert(p.uid, t.clone());
        t
    }

    pub fn constant(&self, values: Vec<f64>, shape: &[usize]) -> Tensor {
        self.tape.constant(values, shape)
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.tape.scalar(v)
    }

    /// Gradient for a parameter after backward; zeros if the parameter was
    /// never bound or is unreachable from the loss.
    pub fn grad(&self, p: &Param) -> Vec<f64> {
        match self.bound.get(&p.uid) {
            Some(t) => t.grad().unwrap_or_else(|| vec![0.0; p.numel()]),
            None => vec![0.0; p.numel()],
        }
    }
}

impl Default for Ctx {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_grad_wrt_itself_is_one() {
        let tape = Tape::new();
        let x = tape.constant(vec![3.0], &[1]);
        let y = x.mul(&x);
        let loss = y.sum();
        loss.backward();
        assert_eq!(loss.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn unreachable_gets_zero_grad() {
        let mut cx = Ctx::new();
        let used = Param::new("used", &[2], vec![1.0, 2.0]);
        let unused = Param::new("unused", &[2], vec![5.0, 6.0]);
        let x = cx.var(&used);
        let _orphan = cx.var(&unused);
        let loss = x.mul(&x).sum();
        loss.backward();
        assert_eq!(cx.grad(&used), vec![2.0, 4.0]);
        assert_eq!(cx.grad(&unused), vec![0.0, 0.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let x = tape.constant(vec![1.0, 2.0], &[2]);
        let loss = x.mul(&x).sum();
        loss.backward();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn relu_of_negative_has_zero_grad() {
        let tape = Tape::new();
        let x = tape.constant(vec![-3.0], &[1]);
        let loss = x.relu().sum();
        loss.backward();
        assert_eq!(x.grad().unwrap(), vec![0.0]);
    }

    #[test]
    #[should_panic(expected = "backward: loss must be scalar-shaped")]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.constant(vec![1.0, 2.0], &[2]);
        x.backward();
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let tape = Tape::new();
            let x = tape.constant(vec![0.3, -1.7, 2.9], &[3]);
            let w = tape.constant(vec![0.5, 0.25, -0.125], &[3]);
            let loss = x.mul(&w).relu().sum();
            loss.backward();
            (x.grad().unwrap(), w.grad().unwrap())
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn grad_is_none_before_backward() {
        let tape = Tape::new();
        let x = tape.constant(vec![1.0], &[1]);
        assert!(x.grad().is_none());
    }
}

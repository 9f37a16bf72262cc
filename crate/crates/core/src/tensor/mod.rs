//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! Every operation records its inputs and a backward closure on an implicit
//! tape (the expression DAG itself). Calling [`Tensor::backward`] on a scalar
//! walks the DAG in reverse topological order and accumulates exact
//! gradients into every reachable `requires_grad` leaf. Gradients keep
//! accumulating across calls until [`Tensor::zero_grad`] clears them, which
//! is what multi-term losses want.
//!
//! Tensors are immutable once created; the two sanctioned exceptions are the
//! gradient buffer and leaf data replaced by the optimizer between steps
//! (never while a graph referencing the leaf is still alive).

mod ops;
mod optim;

pub use optim::{AdamW, AdamWConfig};

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

pub(crate) type BackwardFn<F> = Box<dyn Fn(&[F]) -> Vec<Vec<F>>>;

pub(crate) struct Inner<F: Scalar> {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<F>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<F>>>,
    parents: Vec<Tensor<F>>,
    backward: Option<BackwardFn<F>>,
}

/// Dense tensor participating in the gradient tape.
///
/// Cloning is cheap (reference count); a single graph must stay on one
/// thread, while independent graphs may live on different threads.
pub struct Tensor<F: Scalar> {
    inner: Rc<Inner<F>>,
}

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

thread_local! {
    static NEXT_ID: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

fn next_id() -> usize {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Scalar> Tensor<F> {
    fn build(
        shape: Vec<usize>,
        data: Vec<F>,
        requires_grad: bool,
        parents: Vec<Tensor<F>>,
        backward: Option<BackwardFn<F>>,
    ) -> Tensor<F> {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
                parents,
                backward,
            }),
        }
    }

    /// Checked constructor for constants.
    pub fn new(data: Vec<F>, shape: &[usize]) -> Result<Tensor<F>> {
        if numel(shape) != data.len() {
            return Err(Error::invalid(format!(
                "tensor: shape {:?} wants {} elements, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor" });
        }
        Ok(Self::build(shape.to_vec(), data, false, vec![], None))
    }

    /// Trainable leaf: participates in gradients.
    pub fn param(data: Vec<F>, shape: &[usize]) -> Result<Tensor<F>> {
        let t = Self::new(data, shape)?;
        Ok(Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape: t.inner.shape.clone(),
                data: RefCell::new(t.values()),
                requires_grad: true,
                grad: RefCell::new(None),
                parents: vec![],
                backward: None,
            }),
        })
    }

    pub fn scalar(v: F) -> Tensor<F> {
        Self::build(vec![1], vec![v], false, vec![], None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor<F> {
        Self::build(shape.to_vec(), vec![F::zero(); numel(shape)], false, vec![], None)
    }

    pub fn full(shape: &[usize], v: F) -> Tensor<F> {
        Self::build(shape.to_vec(), vec![v; numel(shape)], false, vec![], None)
    }

    /// Standard-normal constant tensor.
    pub fn randn<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor<F> {
        Self::build(shape.to_vec(), rng::normal_vec(rng, numel(shape)), false, vec![], None)
    }

    /// Standard-normal trainable leaf scaled by `scale`.
    pub fn randn_param<R: Rng>(rng: &mut R, shape: &[usize], scale: F) -> Tensor<F> {
        let data: Vec<F> = rng::normal_vec::<F, _>(rng, numel(shape))
            .into_iter()
            .map(|v| v * scale)
            .collect();
        Tensor::param(data, shape).expect("finite init")
    }

    pub fn id(&self) -> usize {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.parents.is_empty() && self.inner.backward.is_none()
    }

    pub(crate) fn data(&self) -> std::cell::Ref<'_, Vec<F>> {
        self.inner.data.borrow()
    }

    /// Copy of the underlying values.
    pub fn values(&self) -> Vec<F> {
        self.inner.data.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> F {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.inner.data.borrow()[0]
    }

    /// Replace leaf data in place. Only valid between graph constructions.
    pub fn set_data(&self, data: Vec<F>) -> Result<()> {
        if !self.is_leaf() {
            return Err(Error::invalid("set_data: only leaves may be mutated"));
        }
        if data.len() != self.numel() {
            return Err(Error::invalid(format!(
                "set_data: expected {} elements, got {}",
                self.numel(),
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "set_data" });
        }
        *self.inner.data.borrow_mut() = data;
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Gradients of leaves accumulate across repeated calls.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }

        // Post-order DFS: parents precede children in `order`.
        let mut order: Vec<Tensor<F>> = Vec::new();
        let mut visited: std::collections::HashSet<usize> = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor<F>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.inner.id);
        while let Some((node, pi)) = stack.pop() {
            if pi < node.inner.parents.len() {
                let parent = node.inner.parents[pi].clone();
                stack.push((node, pi + 1));
                if parent.inner.requires_grad && visited.insert(parent.inner.id) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }

        let mut grads: HashMap<usize, Vec<F>> = HashMap::new();
        grads.insert(self.inner.id, vec![F::one()]);

        // Children before parents: iterate in reverse post-order.
        for node in order.iter().rev() {
            let g = match grads.remove(&node.inner.id) {
                Some(g) => g,
                None => continue,
            };
            if let Some(bk) = &node.inner.backward {
                let parent_grads = bk(&g);
                debug_assert_eq!(parent_grads.len(), node.inner.parents.len());
                for (p, pg) in node.inner.parents.iter().zip(parent_grads) {
                    if !p.inner.requires_grad {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), p.numel());
                    grads
                        .entry(p.inner.id)
                        .and_modify(|acc| {
                            for (a, b) in acc.iter_mut().zip(&pg) {
                                *a += *b;
                            }
                        })
                        .or_insert(pg);
                }
            }
            if node.is_leaf() && node.inner.requires_grad {
                let mut slot = node.inner.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += *b;
                        }
                    }
                    None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

impl<F: Scalar> std::fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("data", &self.inner.data.borrow())
            .finish()
    }
}

/// Shared constructor for op results; prunes the tape when no input needs
/// gradients and rejects non-finite outputs.
pub(crate) fn op_result<F: Scalar>(
    op: &'static str,
    shape: Vec<usize>,
    data: Vec<F>,
    parents: Vec<Tensor<F>>,
    backward: impl FnOnce() -> BackwardFn<F>,
) -> Result<Tensor<F>> {
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op });
    }
    let requires_grad = parents.iter().any(|p| p.requires_grad());
    if requires_grad {
        Ok(Tensor::build(shape, data, true, parents, Some(backward())))
    } else {
        Ok(Tensor::build(shape, data, false, vec![], None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::param(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let loss = x.sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn quadratic_gradient() {
        let x = Tensor::param(vec![2.0], &[1]).unwrap();
        let loss = x.mul(&x).unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let x = Tensor::param(vec![1.0, -1.0], &[2]).unwrap();
        let loss = x.sum().unwrap();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = x.mul(&x).unwrap();
        assert!(matches!(y.backward(), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn linearity_of_backward() {
        // grad(a*f + b*g) == a*grad(f) + b*grad(g)
        let xv: Vec<f64> = vec![0.3, -0.7, 1.9];
        let (a, b) = (2.5, -1.25);

        let x = Tensor::param(xv.clone(), &[3]).unwrap();
        let f = x.exp().unwrap().sum().unwrap();
        let g = x.mul(&x).unwrap().sum().unwrap();
        let combined = f.mul_scalar(a).unwrap().add(&g.mul_scalar(b).unwrap()).unwrap();
        combined.backward().unwrap();
        let got = x.grad().unwrap();

        let x2 = Tensor::param(xv.clone(), &[3]).unwrap();
        x2.exp().unwrap().sum().unwrap().backward().unwrap();
        let gf = x2.grad().unwrap();
        x2.zero_grad();
        x2.mul(&x2).unwrap().sum().unwrap().backward().unwrap();
        let gg = x2.grad().unwrap();

        for i in 0..3 {
            let want = a * gf[i] + b * gg[i];
            assert!((got[i] - want).abs() < 1e-12, "{} vs {}", got[i], want);
        }
    }

    #[test]
    fn non_finite_output_rejected() {
        let x = Tensor::new(vec![-1.0], &[1]).unwrap();
        assert!(matches!(x.log(), Err(Error::NonFinite { op: "log" })));
    }

    #[test]
    fn f32_instantiation_works_end_to_end() {
        let x = Tensor::<f32>::param(vec![0.5, -1.5, 2.0], &[3]).unwrap();
        let loss = x.gelu().unwrap().square().unwrap().sum().unwrap();
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        assert_eq!(g.len(), 3);
        assert!(g.iter().all(|v| v.is_finite()));

        let raw = vec![0.0f32; 29];
        let params = crate::flows::SplineParams::from_raw(&raw, 10, 5.0, 1e-3).unwrap();
        let (y, ld) = params.forward(1.25f32);
        assert!((y - 1.25).abs() < 1e-4);
        assert!(ld.abs() < 1e-4);
    }
}

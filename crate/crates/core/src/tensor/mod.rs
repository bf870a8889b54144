//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! Every operation returns a fresh [`Tensor`]. When any operand requires a
//! gradient the result records its parents and a backward closure; calling
//! [`Tensor::backward`] on a scalar walks that record in reverse topological
//! order and accumulates gradients into every tensor that requires them.
//!
//! Graphs are built from `Rc` handles and are confined to the thread that
//! built them. Parameters live outside the graph (see `model::ParamSet`) and
//! are bound to fresh leaves for every forward pass.

mod kernels;
mod nn;
mod ops;

pub use nn::Activation;

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;

use crate::error::{Error, Result};

type BackwardFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>>>;

struct OpRecord {
    name: &'static str,
    parents: Vec<Tensor>,
    /// `(output data, output grad) -> per-parent grad`
    backward: BackwardFn,
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    op: Option<OpRecord>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.op.as_ref().map(|o| o.name))
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!("zero extent in shape {shape:?}")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {} elements but {} were given",
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor(Rc::new(Node {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            op: None,
        })))
    }

    /// A constant (no gradient) tensor.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, false)
    }

    /// A leaf that collects gradients.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(shape.to_vec(), vec![0.0; numel(shape)], false).expect("valid zero shape")
    }

    pub fn scalar(v: f64) -> Self {
        Self::leaf(Vec::new(), vec![v], false).expect("scalar")
    }

    /// Build an op result. `backward` receives the output data and the
    /// upstream gradient and returns one optional gradient per parent.
    pub(crate) fn from_op<F>(
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: F,
    ) -> Tensor
    where
        F: Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    {
        debug_assert_eq!(numel(&shape), data.len(), "{name}: shape/data mismatch");
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let op = requires_grad.then(|| OpRecord {
            name,
            parents,
            backward: Box::new(backward),
        });
        Tensor(Rc::new(Node {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            op,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Name of the op that produced this tensor, `None` for leaves and constants.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.op.as_ref().map(|o| o.name)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    /// Gradient, or zeros when nothing reached this tensor.
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.grad().unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Copy of the values with no graph attached.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), false).expect("same shape")
    }

    pub fn item(&self) -> f64 {
        self.0.data[0]
    }

    fn ptr(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode sweep from a scalar. Gradients accumulate into the `grad`
    /// slot of every tensor on the path that requires one.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Post-order DFS: parents land before children.
        let mut order: Vec<Tensor> = Vec::new();
        let mut index: BTreeMap<*const Node, usize> = BTreeMap::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        let mut seen: BTreeMap<*const Node, ()> = BTreeMap::new();
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                index.insert(t.ptr(), order.len());
                order.push(t);
                continue;
            }
            if seen.insert(t.ptr(), ()).is_some() {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(op) = &t.0.op {
                for p in op.parents.iter().rev() {
                    if p.requires_grad() && !seen.contains_key(&p.ptr()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; order.len()];
        let last = order.len() - 1;
        grads[last] = Some(vec![1.0]);
        for i in (0..order.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &order[i].0;
            if let Some(op) = &node.op {
                let parent_grads = (op.backward)(&node.data, &g);
                debug_assert_eq!(parent_grads.len(), op.parents.len(), "{}", op.name);
                for (p, pg) in op.parents.iter().zip(parent_grads) {
                    let (Some(pg), true) = (pg, p.requires_grad()) else {
                        continue;
                    };
                    let j = index[&p.ptr()];
                    match &mut grads[j] {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            let mut slot = node.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

/// Central-difference gradient of a scalar function at `x`:
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every element.
pub fn finite_difference_gradient<F>(f: F, x: &Tensor, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let base = x.data().to_vec();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        out.push(fd_element(&f, x.shape(), &base, i, h)?);
    }
    Ok(out)
}

/// One coordinate of [`finite_difference_gradient`].
pub fn fd_element<F>(f: &F, shape: &[usize], base: &[f64], i: usize, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let eval = |delta: f64| -> Result<f64> {
        let mut d = base.to_vec();
        d[i] += delta;
        let y = f(&Tensor::new(shape, d)?)?;
        if y.numel() != 1 {
            return Err(Error::Contract("finite differences need a scalar function".into()));
        }
        Ok(y.item())
    };
    Ok((eval(h)? - eval(-h)?) / (2.0 * h))
}

//! Dense f64 tensors and the reverse-mode tape.
//!
//! A [`Tensor`] is an immutable row-major `Vec<f64>` with an explicit shape.
//! Every operation copies; there are no views or strides, which keeps the
//! gradient rules straightforward to audit. Differentiation is handled by a
//! per-forward-pass [`Tape`](tape::Tape): operations record their inputs and
//! a backward rule, and [`Tape::backward`](tape::Tape::backward) sweeps the
//! records once in reverse, accumulating gradients into `requires_grad`
//! leaves. Only first-order gradients are supported.

mod grad_check;
mod ops;
mod tape;

pub use grad_check::grad_check;
pub use tape::Tape;

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::error::{FantfError, Result};
use crate::rng::RngState;

/// Immutable dense tensor. Cloning is cheap (shared storage).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<TensorInner>,
}

struct TensorInner {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    /// Written by the backward sweep of the tape this tensor is a leaf on.
    grad: RefCell<Option<Vec<f64>>>,
    /// (tape uid, node id) when this tensor is registered on a live tape.
    node: Cell<Option<(u64, usize)>>,
}

impl Tensor {
    /// Builds a tensor, checking that the shape describes `data.len()`
    /// elements. Zero-sized extents are rejected.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(FantfError::Dimension(format!(
                "tensor: invalid shape {shape:?} (empty or zero extent)"
            )));
        }
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(FantfError::Dimension(format!(
                "tensor: shape {shape:?} describes {count} elements, data has {}",
                data.len()
            )));
        }
        Ok(Self::from_parts(shape.to_vec(), data, false))
    }

    /// Like [`Tensor::new`] but the result participates in differentiation.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let t = Tensor::new(shape, data)?;
        Ok(Self::from_parts(t.inner.shape.clone(), t.inner.data.clone(), true))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(TensorInner {
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                node: Cell::new(None),
            }),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let count = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; count], false)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let count = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; count], false)
    }

    /// Rank-1 single-element tensor, the convention for scalars here.
    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value], false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn len(&self) -> usize {
        self.inner.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    /// The value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.len() != 1 {
            return Err(FantfError::Contract(format!(
                "item: tensor of shape {:?} is not a scalar",
                self.shape()
            )));
        }
        Ok(self.inner.data[0])
    }

    /// Element at a full multi-index (test/debug convenience).
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.rank(), "at: index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &ext)) in index.iter().zip(self.shape()).enumerate() {
            assert!(ix < ext, "at: index {ix} out of range for axis {i}");
            flat = flat * ext + ix;
        }
        self.inner.data[flat]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Gradient accumulated by the most recent backward pass, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn set_grad(&self, g: Vec<f64>) {
        debug_assert_eq!(g.len(), self.len());
        *self.inner.grad.borrow_mut() = Some(g);
    }

    pub(crate) fn tape_node(&self, tape_uid: u64) -> Option<usize> {
        match self.inner.node.get() {
            Some((uid, id)) if uid == tape_uid => Some(id),
            _ => None,
        }
    }

    pub(crate) fn set_tape_node(&self, tape_uid: u64, id: usize) {
        self.inner.node.set(Some((tape_uid, id)));
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff: shape mismatch");
        self.data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let head: Vec<f64> = self.data().iter().take(8).copied().collect();
        let ellipsis = if self.len() > 8 { ", .." } else { "" };
        write!(
            f,
            "Tensor{:?}{}{:?}{}",
            self.shape(),
            if self.requires_grad() { "*" } else { "" },
            head,
            ellipsis
        )
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl RngState {
    /// Tensor of i.i.d. gaussian draws; `std == 0` yields the constant
    /// `mean` without consuming the stream.
    pub fn sample_gaussian(&mut self, shape: &[usize], mean: f64, std: f64) -> Tensor {
        assert!(std >= 0.0, "sample_gaussian: negative std");
        let count: usize = shape.iter().product();
        let data = if std == 0.0 {
            vec![mean; count]
        } else {
            (0..count).map(|_| mean + std * self.next_gaussian()).collect()
        };
        Tensor::from_parts(shape.to_vec(), data, false)
    }

    /// Tensor of i.i.d. uniform draws in [lo, hi).
    pub fn sample_uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let count: usize = shape.iter().product();
        let data = (0..count).map(|_| self.uniform(lo, hi)).collect();
        Tensor::from_parts(shape.to_vec(), data, false)
    }
}

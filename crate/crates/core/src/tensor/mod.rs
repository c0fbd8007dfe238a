//! Dense rank-4 tensors with reverse-mode differentiation.
//!
//! Every value in the pipeline is a `(batch, channels, height, width)`
//! tensor of `f32`, stored row-major. Operations live in [`ops`] and are
//! pure functions of their inputs plus an explicit [`Tape`]; recording
//! happens only when the tape is in training mode and some input
//! requires gradients.

mod tape;

pub mod ops;

pub use tape::{backward, GradStore, Tape};

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Unique identity of a tensor allocation, used by the tape.
pub type TensorId = u64;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> TensorId {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Shape of a rank-4 tensor in `(batch, channels, height, width)` order.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(b: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { b, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.b * self.c * self.h * self.w
    }

    /// Flat index of `(b, c, i, j)` in row-major order.
    #[inline]
    pub fn idx(&self, b: usize, c: usize, i: usize, j: usize) -> usize {
        ((b * self.c + c) * self.h + i) * self.w + j
    }

    /// Size of one batch sample.
    #[inline]
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    /// Size of one channel plane.
    #[inline]
    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.b, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.b, self.c, self.h, self.w)
    }
}

struct Inner {
    id: TensorId,
    shape: Shape,
    data: Vec<f32>,
    requires_grad: bool,
}

/// Immutable rank-4 tensor. Cloning is cheap (shared storage).
#[derive(Clone)]
pub struct Tensor {
    inner: Arc<Inner>,
}

impl Tensor {
    /// Build a tensor from raw row-major data.
    pub fn new(shape: Shape, data: Vec<f32>, requires_grad: bool) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::config(format!(
                "data length {} does not match shape {} = {} elements",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor {
            inner: Arc::new(Inner { id: fresh_id(), shape, data, requires_grad }),
        })
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        Tensor::new(shape, data, false)
    }

    /// Learnable-parameter constructor: marks the tensor as a gradient leaf.
    pub fn param(shape: Shape, data: Vec<f32>) -> Result<Self> {
        Tensor::new(shape, data, true)
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::new(shape, vec![0.0; shape.numel()], false).expect("consistent")
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Tensor::new(shape, vec![value; shape.numel()], false).expect("consistent")
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..shape.b {
            for c in 0..shape.c {
                for i in 0..shape.h {
                    for j in 0..shape.w {
                        data.push(f(b, c, i, j));
                    }
                }
            }
        }
        Tensor::new(shape, data, false).expect("consistent")
    }

    pub fn id(&self) -> TensorId {
        self.inner.id
    }

    pub fn shape(&self) -> Shape {
        self.inner.shape
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> &[f32] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.data.clone()
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, i: usize, j: usize) -> f32 {
        self.inner.data[self.inner.shape.idx(b, c, i, j)]
    }

    /// Copy of this tensor cut from any gradient history (fresh leaf,
    /// `requires_grad = false`).
    pub fn detach(&self) -> Tensor {
        Tensor::new(self.shape(), self.to_vec(), false).expect("consistent")
    }

    /// Same data as a gradient leaf.
    pub fn detach_as_param(&self) -> Tensor {
        Tensor::new(self.shape(), self.to_vec(), true).expect("consistent")
    }

    pub fn max_abs(&self) -> f32 {
        self.data().iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    /// Mirror along the width axis. Plain data permutation, never recorded.
    pub fn flip_h(&self) -> Tensor {
        let s = self.shape();
        Tensor::from_fn(s, |b, c, i, j| self.at(b, c, i, s.w - 1 - j))
    }

    /// Mirror along the height axis. Plain data permutation, never recorded.
    pub fn flip_v(&self) -> Tensor {
        let s = self.shape();
        Tensor::from_fn(s, |b, c, i, j| self.at(b, c, s.h - 1 - i, j))
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={}, requires_grad={})",
            self.id(),
            self.shape(),
            self.requires_grad()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_indexing_is_row_major() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.idx(0, 0, 0, 0), 0);
        assert_eq!(s.idx(0, 0, 0, 1), 1);
        assert_eq!(s.idx(0, 0, 1, 0), 5);
        assert_eq!(s.idx(0, 1, 0, 0), 20);
        assert_eq!(s.idx(1, 0, 0, 0), 60);
        assert_eq!(s.numel(), 120);
    }

    #[test]
    fn length_mismatch_is_config_error() {
        let err = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn ids_are_unique() {
        let a = Tensor::zeros(Shape::new(1, 1, 1, 1));
        let b = Tensor::zeros(Shape::new(1, 1, 1, 1));
        assert_ne!(a.id(), b.id());
        assert_ne!(a.detach().id(), a.id());
    }

    #[test]
    fn flips_mirror_data() {
        let t = Tensor::from_fn(Shape::new(1, 1, 2, 3), |_, _, i, j| (i * 3 + j) as f32);
        let h = t.flip_h();
        assert_eq!(h.data(), &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]);
        let v = t.flip_v();
        assert_eq!(v.data(), &[3.0, 4.0, 5.0, 0.0, 1.0, 2.0]);
        assert_eq!(t.flip_h().flip_h().data(), t.data());
    }
}

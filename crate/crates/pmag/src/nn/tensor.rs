//! Minimal dense f64 containers for parameters and activations.

use crate::error::{Error, Result};

/// A dense row-major f64 tensor used for model parameters and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "tensor shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A time-major activation volume with layout `[t][c][h][w]`.
///
/// Time-major keeps each frame's features contiguous, which lets the conv
/// engine parallelize over disjoint `&mut` frame chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(t: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            t,
            c,
            h,
            w,
            data: vec![0.0; t * c * h * w],
        }
    }

    #[inline]
    pub fn frame_len(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    /// Immutable `[h][w]` plane for `(t, c)`.
    #[inline]
    pub fn plane(&self, t: usize, c: usize) -> &[f64] {
        let hw = self.h * self.w;
        let off = (t * self.c + c) * hw;
        &self.data[off..off + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, t: usize, c: usize) -> &mut [f64] {
        let hw = self.h * self.w;
        let off = (t * self.c + c) * hw;
        &mut self.data[off..off + hw]
    }

    pub fn same_shape(&self, other: &Volume) -> bool {
        self.t == other.t && self.c == other.c && self.h == other.h && self.w == other.w
    }

    pub fn add_assign(&mut self, other: &Volume) {
        assert!(self.same_shape(other), "volume shape mismatch in add");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

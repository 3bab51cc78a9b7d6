//! Dense tensors and reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain value: a shape plus row-major `f32` storage behind an
//! `Arc`, so cloning one into a computation graph is cheap and sharing across
//! worker threads is free. Differentiation is tape-based: [`Graph`] records
//! every operation in creation order, [`Graph::backward`] walks the tape in
//! reverse, and each recorded node keeps whatever discrete context (argmax
//! positions, neighbor tables, dropout masks) its gradient needs.
//!
//! A graph and its tensors belong to one thread during forward/backward;
//! distinct graphs (one per sample) may run concurrently since they share no
//! mutable state. Parameters at rest live in a [`ParamSet`] and are bound into
//! each graph as leaves.

mod adam;
mod graph;
pub mod gradcheck;
mod kernel;
mod params;
mod replay;

pub use adam::AdamState;
pub use graph::{Graph, Var};
pub use params::{Param, ParamSet};

use std::sync::Arc;

use rand::Rng;

use crate::error::{fmt_shape, Error, Result};

/// Shape plus flat row-major storage; clones share the buffer copy-on-write.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f32>>,
}

impl Tensor {
    /// Builds a tensor, checking that the extents are positive and match the
    /// data length.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::dim(
                "tensor",
                format!("extents must be positive, got {}", fmt_shape(&shape)),
            ));
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::dim(
                "tensor",
                format!(
                    "shape {} implies {} elements, data has {}",
                    fmt_shape(&shape),
                    expect,
                    data.len()
                ),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![0.0; n]),
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; n]),
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data: Arc::new(data),
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// n x n identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor {
            shape: vec![n, n],
            data: Arc::new(data),
        }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn rand_uniform(shape: &[usize], lo: f32, hi: f32, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        }
    }

    /// Glorot-uniform init for a `fan_in x fan_out` weight matrix.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f32).sqrt();
        Tensor::rand_uniform(&[fan_in, fan_out], -a, a, rng)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // extents are positive by construction
    }

    /// Rows of a rank >= 1 tensor (first extent).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[1]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access; copies the buffer first if it is shared.
    pub fn data_mut(&mut self) -> &mut [f32] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Same buffer, new shape (element count must match).
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if shape.contains(&0) || expect != self.len() {
            return Err(Error::dim(
                "reshape",
                format!(
                    "cannot view {} elements as {}",
                    self.len(),
                    fmt_shape(shape)
                ),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    /// Largest absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn new_checks_extents_and_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
    }

    #[test]
    fn identity_has_unit_diagonal() {
        let i3 = Tensor::identity(3);
        assert_eq!(i3.data(), &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
    }

    #[test]
    fn clone_is_copy_on_write() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let mut b = a.clone();
        b.data_mut()[0] = 9.0;
        assert_eq!(a.data(), &[1.0, 2.0]);
        assert_eq!(b.data(), &[9.0, 2.0]);
    }

    #[test]
    fn reshape_preserves_data_and_checks_count() {
        let a = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = a.reshaped(&[3, 2]).unwrap();
        assert_eq!(b.shape(), &[3, 2]);
        assert_eq!(b.data(), a.data());
        assert!(a.reshaped(&[4, 2]).is_err());
    }

    #[test]
    fn glorot_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = Tensor::glorot(8, 8, &mut rng);
        let bound = (6.0f32 / 16.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }
}

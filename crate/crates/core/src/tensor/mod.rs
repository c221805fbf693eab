//! Dense tensors, layer kernels, loss, optimizer and gradient verification.
//!
//! Everything here is generic over [`Scalar`] so the same kernels run in
//! single precision for training and inference and in double precision for
//! finite-difference gradient checks.

mod gemm;
pub mod gradcheck;
mod layer;
mod ops;

use std::cell::RefCell;
use std::fmt::Debug;

use num_traits::Float;

use crate::error::{Error, Result};

pub use gemm::{gemm, MatRef};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use layer::{Gradients, Layer, LayerKind, Stack, Trace};
pub use ops::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, relu, relu_backward, sgd_step,
    softmax, softmax_cross_entropy, ConvGrads, FcGrads,
};

thread_local! {
    static PACK_F32: RefCell<gemm::PackBuffers<f32>> = RefCell::default();
    static PACK_F64: RefCell<gemm::PackBuffers<f64>> = RefCell::default();
}

/// Floating-point element type of a [`Tensor`].
pub trait Scalar: Float + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c (+)= a * b` for row-major `c` with leading dimension `ldc`.
    #[allow(clippy::too_many_arguments)]
    fn gemm_kernel(
        m: usize,
        n: usize,
        k: usize,
        a: MatRef<'_, Self>,
        b: MatRef<'_, Self>,
        c: &mut [Self],
        ldc: usize,
        accumulate: bool,
    );
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn gemm_kernel(
        m: usize,
        n: usize,
        k: usize,
        a: MatRef<'_, Self>,
        b: MatRef<'_, Self>,
        c: &mut [Self],
        ldc: usize,
        accumulate: bool,
    ) {
        PACK_F32.with_borrow_mut(|bufs| gemm::dispatch::<f32, 6, 16, 12, 32>(m, n, k, a, b, c, ldc, accumulate, bufs))
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn gemm_kernel(
        m: usize,
        n: usize,
        k: usize,
        a: MatRef<'_, Self>,
        b: MatRef<'_, Self>,
        c: &mut [Self],
        ldc: usize,
        accumulate: bool,
    ) {
        PACK_F64.with_borrow_mut(|bufs| gemm::dispatch::<f64, 6, 8, 12, 16>(m, n, k, a, b, c, ldc, accumulate, bufs))
    }
}

/// Dense row-major array. `data.len()` always equals the product of `shape`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, S::zero())
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::dim("Tensor::from_vec", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::dim("Tensor::reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-type conversion, e.g. to run a gradient check in `f64`.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }

    /// Rows of the leading axis as contiguous slices.
    pub fn outer(&self, index: usize) -> &[S] {
        let stride = self.data.len() / self.shape[0];
        &self.data[index * stride..(index + 1) * stride]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn reshape_keeps_data() {
        let t = Tensor::<f64>::from_vec(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        let r = t.clone().reshape(&[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(&[4]).is_err());
    }
}

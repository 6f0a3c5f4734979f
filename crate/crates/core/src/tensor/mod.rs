//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! The compute substrate for every network in this crate: a plain value type
//! [`Tensor`], a recording tape [`Tape`] whose ops build a backward graph, an
//! [`AdamW`](optim::AdamW) optimizer, and a finite-difference
//! [`grad_check`](gradcheck::grad_check) harness.
//!
//! Everything is generic over [`Real`] (`f32` default pipeline, `f64` for
//! gradient-check headroom) and single-threaded per tape; tensors themselves
//! are immutable values that can be shared read-only across threads.

pub mod gradcheck;
mod kernels;
pub mod optim;
mod tape;

pub use tape::{Gradients, Tape, Var};

use crate::error::NumericsError;

/// Scalar types the engine computes in: `f32` (default) or `f64` (test mode).
pub trait Real:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    const DTYPE: Dtype;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn to_le_bytes_vec(self) -> Vec<u8>;
}

macro_rules! impl_real {
    ($t:ty, $dtype:expr) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const DTYPE: Dtype = $dtype;

            #[inline(always)]
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            #[inline(always)]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline(always)]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline(always)]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline(always)]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline(always)]
            fn max(self, other: Self) -> Self {
                <$t>::max(self, other)
            }
            #[inline(always)]
            fn min(self, other: Self) -> Self {
                <$t>::min(self, other)
            }
            #[inline(always)]
            fn powi(self, n: i32) -> Self {
                <$t>::powi(self, n)
            }
            fn to_le_bytes_vec(self) -> Vec<u8> {
                self.to_le_bytes().to_vec()
            }
        }
    };
}

impl_real!(f32, Dtype::F32);
impl_real!(f64, Dtype::F64);

/// Element type tag used by the FRVS container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    U8,
}

/// Shorthand for lifting a literal into the active scalar type.
#[inline(always)]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x)
}

/// A dense row-major tensor value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self, NumericsError> {
        let numel: usize = dims.iter().product();
        if numel != data.len() || dims.iter().any(|&d| d == 0) {
            return Err(NumericsError::Contract(format!(
                "tensor dims {:?} (numel {}) do not match data length {}",
                dims,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let numel = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![T::ZERO; numel],
        }
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        let numel = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Self {
        Tensor::new(dims.to_vec(), data).expect("dims/data length mismatch")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Scalar extraction; the tensor must hold exactly one element.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        // NaN/Inf propagate into the sums; eight lanes break the add
        // dependency chain so the scan vectorizes.
        let mut lanes = [T::ZERO; 8];
        let mut chunks = self.data.chunks_exact(8);
        for c in &mut chunks {
            for (l, &v) in lanes.iter_mut().zip(c) {
                *l += v;
            }
        }
        let mut total = chunks.remainder().iter().copied().sum::<T>();
        for l in lanes {
            total += l;
        }
        total.is_finite()
    }

    /// Reinterprets the value with new dims of equal element count.
    pub fn reshaped(&self, dims: &[usize]) -> Result<Self, NumericsError> {
        let numel: usize = dims.iter().product();
        if numel != self.numel() {
            return Err(NumericsError::ShapeMismatch {
                op: "reshape",
                lhs: self.dims.clone(),
                rhs: dims.to_vec(),
            });
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise binary combination; dims must match exactly.
    pub fn zip(&self, other: &Self, op: &'static str, mut f: impl FnMut(T, T) -> T) -> Result<Self, NumericsError> {
        if self.dims != other.dims {
            return Err(NumericsError::ShapeMismatch {
                op,
                lhs: self.dims.clone(),
                rhs: other.dims.clone(),
            });
        }
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn to_dtype<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * std::mem::size_of::<T>());
        for &x in &self.data {
            out.extend_from_slice(&x.to_le_bytes_vec());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_mismatched_dims() {
        assert!(Tensor::new(vec![2, 3], vec![1.0f32; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0f32; 6]).is_ok());
    }

    #[test]
    fn finiteness_scan_catches_nan_and_inf() {
        let mut t = Tensor::<f32>::zeros(&[4]);
        assert!(t.is_finite());
        t.data_mut()[2] = f32::NAN;
        assert!(!t.is_finite());
        t.data_mut()[2] = f32::INFINITY;
        assert!(!t.is_finite());
    }

    #[test]
    fn reshape_preserves_values() {
        let t = Tensor::from_vec(&[2, 3], (0..6).map(|i| i as f64).collect());
        let r = t.reshaped(&[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshaped(&[4, 2]).is_err());
    }
}

/// Bench-only re-export of the raw matmul kernel.
pub fn bench_matmul_nn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    kernels::matmul_nn(a, b, c, m, k, n)
}

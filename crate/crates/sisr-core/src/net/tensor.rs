//! Dense tensors generic over the two float widths.
//!
//! Everything trains and infers in f32; the f64 instantiation exists so the
//! same graph code can be run under finite-difference scrutiny at full
//! precision (f32 rounding would swamp the tolerances otherwise).

use std::fmt::Debug;

use crate::{Error, Result};

/// Element type of tensors: f32 or f64, with a matching GEMM kernel.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Debug + Send + Sync + 'static
{
    /// `C := alpha * A x B + beta * C` with explicit row/column strides,
    /// dimensions `A: m x k`, `B: k x n`, `C: m x n`.
    ///
    /// # Safety
    /// Pointers must cover the strided extents implied by the dimensions.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Scalar for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> Self {
        v
    }

    fn into_f64(self) -> f64 {
        self
    }
}

/// Row-major dense tensor. Activations use `[N, C, H, W]`, conv weights
/// `[Cout, Cin, Kh, Kw]`, biases `[Cout]`, scalars `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Tensor<T> {
        Tensor { dims: dims.to_vec(), data: vec![T::zero(); dims.iter().product()] }
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Tensor<T>> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{dims:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims: dims.to_vec(), data })
    }

    pub fn scalar(v: T) -> Tensor<T> {
        Tensor { dims: vec![1], data: vec![v] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn fill(&mut self, v: T) {
        self.data.fill(v);
    }

    /// Dimensions as (N, C, H, W); errors unless the tensor is 4-D.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.dims {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::ShapeMismatch(format!("expected a 4-D tensor, got {:?}", self.dims))),
        }
    }

    /// Same data in the other float width.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.into_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checks() {
        let t = Tensor::<f32>::zeros(&[2, 3, 4, 5]);
        assert_eq!(t.len(), 120);
        assert_eq!(t.dims4().unwrap(), (2, 3, 4, 5));
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::zeros(&[4]).dims4().is_err());
    }

    #[test]
    fn cast_roundtrip() {
        let t = Tensor::<f32>::from_vec(&[3], vec![0.5, -1.25, 3.0]).unwrap();
        let d: Tensor<f64> = t.cast();
        let back: Tensor<f32> = d.cast();
        assert_eq!(t, back);
    }
}

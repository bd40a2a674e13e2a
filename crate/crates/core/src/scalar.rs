//! Scalar abstraction shared by all numeric code.
//!
//! Storage is always `f32` (the interchange blob is IEEE-754 single precision),
//! while metrics and loss oracles run in `f64`. Everything in between is
//! generic over [`Scalar`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Dense product `C = A · Bᵀ` on row-major buffers, where `A` is `m × k`,
    /// `B` is `n × k` and `C` is `m × n`. `C` is overwritten.
    fn gemm_abt(m: usize, n: usize, k: usize, a: &[Self], b: &[Self], c: &mut [Self]);

    /// Converts an `f64` literal. Panics only for values the type cannot hold,
    /// which never happens for finite `f64` into `f32`/`f64`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("float to f64")
    }
}

fn check_gemm_shapes<T>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &[T]) {
    assert_eq!(a.len(), m * k, "gemm: A has wrong length");
    assert_eq!(b.len(), n * k, "gemm: B has wrong length");
    assert_eq!(c.len(), m * n, "gemm: C has wrong length");
}

impl Scalar for f32 {
    fn gemm_abt(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
        check_gemm_shapes(m, n, k, a, b, c);
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: buffer lengths checked above; strides describe A (row-major),
        // Bᵀ (B row-major read column-wise) and C (row-major) within bounds.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                1,
                k as isize,
                0.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Scalar for f64 {
    fn gemm_abt(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        check_gemm_shapes(m, n, k, a, b, c);
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: see the f32 impl.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                1,
                k as isize,
                0.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

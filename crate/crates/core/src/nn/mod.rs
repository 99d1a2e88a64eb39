//! A small reverse-mode autodiff engine specialised for single-image
//! convolutional networks (`[C, H, W]` tensors, batch size one).
//!
//! Everything is generic over [`Float`] so the same network code runs in
//! `f32` for training and in `f64` for finite-difference gradient checks.

mod conv;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use conv::ConvGeom;
pub use graph::{Grads, Graph, Var};
pub use layers::{ConvLayer, Init};
pub use optim::{Adam, AdamConfig, Sgd, SgdConfig};
pub use params::{Bound, ParamSet};
pub use tensor::Tensor;

use std::fmt::Debug;

/// Scalar type the engine computes in.
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    /// `c = alpha * a · b + beta * c` on strided row-major views.
    ///
    /// `a` is `m × k`, `b` is `k × n`, `c` is `m × n`; strides are given as
    /// `(row_stride, col_stride)` pairs.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    fn of(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).expect("finite f64 literal")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

fn check_gemm_bounds<T>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (isize, isize),
    b: &[T],
    (rsb, csb): (isize, isize),
    c: &[T],
    (rsc, csc): (isize, isize),
) {
    let last = |rows: usize, cols: usize, rs: isize, cs: isize| -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
        }
    };
    assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
    assert!(last(m, k, rsa, csa) <= a.len(), "gemm: a out of bounds");
    assert!(last(k, n, rsb, csb) <= b.len(), "gemm: b out of bounds");
    assert!(last(m, n, rsc, csc) <= c.len(), "gemm: c out of bounds");
}

macro_rules! impl_float {
    ($t:ty, $gemm:path) => {
        impl Float for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                check_gemm_bounds(m, k, n, a, a_strides, b, b_strides, c, c_strides);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: all three views were bounds-checked above and `c`
                // is uniquely borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_float!(f32, matrixmultiply::sgemm);
impl_float!(f64, matrixmultiply::dgemm);

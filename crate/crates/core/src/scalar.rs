//! Floating-point scalar abstraction shared by the tensor engine, the CAM
//! methods, and image processing.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of every tensor and image in the crate.
///
/// Implemented for `f32` (training, inference) and `f64` (oracle tests).
/// The matrix product is routed to the matching `matrixmultiply` kernel.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// safetensors dtype tag used in checkpoints.
    const DTYPE: safetensors::Dtype;

    /// `c = alpha * op(a) * op(b) + beta * c` for row-major matrices, where
    /// `a` is `m x k`, `b` is `k x n` after the optional transposes.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn to_le_bytes_vec(values: &[Self]) -> Vec<u8>;
    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self>;

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }

    #[inline]
    fn lossy_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to any Scalar")
    }
}

/// Row/column strides for a row-major `rows x cols` matrix, optionally
/// viewed transposed.
#[inline]
fn strides(cols_stored: usize, trans: bool) -> (isize, isize) {
    if trans {
        (1, cols_stored as isize)
    } else {
        (cols_stored as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path, $dtype:expr) => {
        impl Scalar for $t {
            const DTYPE: safetensors::Dtype = $dtype;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                // stored shapes: a is (m x k) or (k x m); b is (k x n) or (n x k)
                let (rsa, csa) = strides(if a_trans { m } else { k }, a_trans);
                let (rsb, csb) = strides(if b_trans { k } else { n }, b_trans);
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }

            fn to_le_bytes_vec(values: &[Self]) -> Vec<u8> {
                values.iter().flat_map(|v| v.to_le_bytes()).collect()
            }

            fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self> {
                const W: usize = std::mem::size_of::<$t>();
                bytes
                    .chunks_exact(W)
                    .map(|c| <$t>::from_le_bytes(c.try_into().expect("chunk width")))
                    .collect()
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm, safetensors::Dtype::F32);
impl_scalar!(f64, matrixmultiply::dgemm, safetensors::Dtype::F64);

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], at: bool, b: &[f64], bt: bool) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    let av = if at { a[p * m + i] } else { a[i * k + p] };
                    let bv = if bt { b[j * k + p] } else { b[p * n + j] };
                    c[i * n + j] += av * bv;
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_for_all_transpose_combinations() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        for at in [false, true] {
            for bt in [false, true] {
                let mut c = vec![0.0; m * n];
                f64::gemm(m, k, n, 1.0, &a, at, &b, bt, 0.0, &mut c);
                let want = naive(m, k, n, &a, at, &b, bt);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn byte_round_trip() {
        let v = [1.5f32, -0.25, 3.0e-7];
        assert_eq!(f32::from_le_bytes_slice(&f32::to_le_bytes_vec(&v)), v);
    }
}

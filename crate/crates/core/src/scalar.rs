//! Floating-point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the tensors, layers and solvers are generic over.
///
/// Implemented for `f32` and `f64`. The crate defaults every generic type to
/// `f64`; the gradient and solver-order checks assume 64-bit precision.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + FromStr + Send + Sync + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// `C += A · B` for an `m × k` matrix `A` and a `k × n` matrix `B`, each
    /// addressed by row and column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: [usize; 2],
        b: &[Self],
        b_strides: [usize; 2],
        c: &mut [Self],
        c_strides: [usize; 2],
    ) {
        for i in 0..m {
            for p in 0..k {
                let aip = a[i * a_strides[0] + p * a_strides[1]];
                for j in 0..n {
                    c[i * c_strides[0] + j * c_strides[1]] += aip * b[p * b_strides[0] + j * b_strides[1]];
                }
            }
        }
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, strides: [usize; 2]) {
    if rows > 0 && cols > 0 {
        assert!(
            (rows - 1) * strides[0] + (cols - 1) * strides[1] < len,
            "gemm operand out of bounds"
        );
    }
}

macro_rules! blas_scalar {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                sa: [usize; 2],
                b: &[Self],
                sb: [usize; 2],
                c: &mut [Self],
                sc: [usize; 2],
            ) {
                if m == 0 || n == 0 || k == 0 {
                    return;
                }
                check_extent(a.len(), m, k, sa);
                check_extent(b.len(), k, n, sb);
                check_extent(c.len(), m, n, sc);
                // SAFETY: every index the kernel touches lies inside the
                // slices, as checked above.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        sa[0] as isize,
                        sa[1] as isize,
                        b.as_ptr(),
                        sb[0] as isize,
                        sb[1] as isize,
                        1.0,
                        c.as_mut_ptr(),
                        sc[0] as isize,
                        sc[1] as isize,
                    )
                }
            }
        }
    };
}

blas_scalar!(f32, matrixmultiply::sgemm);
blas_scalar!(f64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_round_trip() {
        assert_eq!(f64::lit(0.25), 0.25);
        assert_eq!(f32::lit(0.5), 0.5f32);
        assert_eq!(1.5f32.as_f64(), 1.5);
    }

    #[test]
    fn gemm_matches_the_naive_product() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let mut fast = vec![1.0; 8];
        f64::gemm(2, 3, 4, &a, [3, 1], &b, [4, 1], &mut fast, [4, 1]);
        for i in 0..2 {
            for j in 0..4 {
                let dot: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert!((fast[i * 4 + j] - 1.0 - dot).abs() < 1e-14);
            }
        }
        // Transposed view of `a` as a 3 × 2 operand.
        let mut t = vec![0.0f32; 4];
        let a32: Vec<f32> = a.iter().map(|&x| x as f32).collect();
        f32::gemm(2, 3, 2, &a32, [3, 1], &a32, [1, 3], &mut t, [2, 1]);
        let gram: f32 = (0..3).map(|p| a32[p] * a32[3 + p]).sum();
        assert!((t[1] - gram).abs() < 1e-6 && (t[2] - gram).abs() < 1e-6);
    }
}

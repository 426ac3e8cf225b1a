use core::fmt::{Debug, Display};

use num_traits::Float;

/// Floating-point element type of the autodiff engine.
///
/// Training runs in `f32`; gradient checks run the same code in `f64`.
pub trait Real: Float + Default + Debug + Display + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = a * b + beta * c` for row-major `c` (m x n). `a` and `b` are
    /// addressed through explicit (row, column) strides so transposes are free.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
    );
}

fn check_gemm_bounds(
    m: usize,
    k: usize,
    n: usize,
    a_len: usize,
    a_strides: (usize, usize),
    b_len: usize,
    b_strides: (usize, usize),
    c_len: usize,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(
        (m - 1) * a_strides.0 + (k - 1) * a_strides.1 < a_len,
        "gemm: lhs out of bounds"
    );
    assert!(
        (k - 1) * b_strides.0 + (n - 1) * b_strides.1 < b_len,
        "gemm: rhs out of bounds"
    );
    assert!(m * n <= c_len, "gemm: output out of bounds");
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
            ) {
                check_gemm_bounds(m, k, n, a.len(), a_strides, b.len(), b_strides, c.len());
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    for v in &mut c[..m * n] {
                        *v = *v * beta;
                    }
                    return;
                }
                // SAFETY: all index ranges were checked against the slice lengths above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposed_rhs() {
        let a: [f64; 6] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b: [f64; 6] = [1.0, 0.5, -1.0, 2.0, 0.0, 3.0]; // stored 2x3, used as 3x2 transpose
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, &a, (3, 1), &b, (1, 3), 0.0, &mut c);
        let expect = [
            1.0 * 1.0 + 2.0 * 0.5 + 3.0 * -1.0,
            1.0 * 2.0 + 2.0 * 0.0 + 3.0 * 3.0,
            4.0 * 1.0 + 5.0 * 0.5 + 6.0 * -1.0,
            4.0 * 2.0 + 5.0 * 0.0 + 6.0 * 3.0,
        ];
        assert_eq!(c, expect);
    }
}

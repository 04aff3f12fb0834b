//! Row-major matrix products on top of `matrixmultiply`.

/// Operand layout: whether the stored row-major buffer is used as-is or transposed.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub(crate) enum Op {
    N,
    T,
}

/// `c = op(a) * op(b) + beta * c` where `op(a)` is `m x k` and `op(b)` is `k x n`,
/// all buffers row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    op_a: Op,
    b: &[f64],
    op_b: Op,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs has wrong size");
    assert_eq!(b.len(), k * n, "gemm: rhs has wrong size");
    assert_eq!(c.len(), m * n, "gemm: output has wrong size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = match op_a {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match op_b {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the slices, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        ta: Op,
        b: &[f64],
        tb: Op,
    ) -> alloc::vec::Vec<f64> {
        let mut c = alloc::vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    let av = if ta == Op::N {
                        a[i * k + p]
                    } else {
                        a[p * m + i]
                    };
                    let bv = if tb == Op::N {
                        b[p * n + j]
                    } else {
                        b[j * k + p]
                    };
                    s += av * bv;
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn all_transpose_combinations_match_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: alloc::vec::Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: alloc::vec::Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        for ta in [Op::N, Op::T] {
            for tb in [Op::N, Op::T] {
                let mut c = alloc::vec![0.0; m * n];
                gemm(m, k, n, &a, ta, &b, tb, 0.0, &mut c);
                let expect = naive(m, k, n, &a, ta, &b, tb);
                for (x, y) in c.iter().zip(&expect) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}

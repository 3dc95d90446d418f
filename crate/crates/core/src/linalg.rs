//! Small dense kernels behind the convolution and dense layers.
//!
//! Summation order inside every kernel is fixed, so results are bitwise
//! reproducible no matter how callers parallelize over independent outputs.

use crate::scalar::Scalar;

/// out[m, :] += sum_k a[m, k] * b[k, :]
///
/// Row-major throughout: `a` is M x K, `b` is K x N, `out` is M x N. Four
/// output rows advance together so each row of `b` is streamed once per
/// quad instead of once per row; the inner axpy has no cross-lane
/// reduction, which lets the compiler vectorize it without changing
/// results.
pub(crate) fn matmul_acc<T: Scalar>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let quads = m / 4;
    for q in 0..quads {
        let mi = q * 4;
        let (o01, o23) = out[mi * n..(mi + 4) * n].split_at_mut(2 * n);
        let (o0, o1) = o01.split_at_mut(n);
        let (o2, o3) = o23.split_at_mut(n);
        for ki in 0..k {
            let a0 = a[mi * k + ki];
            let a1 = a[(mi + 1) * k + ki];
            let a2 = a[(mi + 2) * k + ki];
            let a3 = a[(mi + 3) * k + ki];
            let b_row = &b[ki * n..(ki + 1) * n];
            for i in 0..n {
                let bv = b_row[i];
                o0[i] += a0 * bv;
                o1[i] += a1 * bv;
                o2[i] += a2 * bv;
                o3[i] += a3 * bv;
            }
        }
    }
    for mi in quads * 4..m {
        let out_row = &mut out[mi * n..(mi + 1) * n];
        let a_row = &a[mi * k..(mi + 1) * k];
        for (ki, &av) in a_row.iter().enumerate() {
            let b_row = &b[ki * n..(ki + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

const LANES: usize = 16;

/// Dot product over sixteen fixed accumulator lanes. The lane layout is
/// part of the numeric contract: same inputs, same bits, independent of
/// the surrounding parallelism.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    for i in 0..chunks {
        let pa = &a[i * LANES..(i + 1) * LANES];
        let pb = &b[i * LANES..(i + 1) * LANES];
        for l in 0..LANES {
            acc[l] += pa[l] * pb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * LANES..a.len() {
        tail += a[i] * b[i];
    }
    let mut total = T::zero();
    for l in 0..LANES {
        total += acc[l];
    }
    total + tail
}

/// b = a transposed; `a` is M x K row-major, `b` becomes K x M.
pub(crate) fn transpose<T: Scalar>(a: &[T], m: usize, k: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    let mut b = vec![T::zero(); k * m];
    for mi in 0..m {
        for ki in 0..k {
            b[ki * m + mi] = a[mi * k + ki];
        }
    }
    b
}

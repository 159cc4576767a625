//! Row-major matrix kernels shared by the tape ops.

use rayon::prelude::*;

/// Work size above which matmul parallelizes over output rows. Each output
/// element is always reduced in ascending-k order, so results are bitwise
/// identical for any thread count.
const PAR_WORK: usize = 1 << 18;

fn mm_row(a: &[f64], b: &[f64], i: usize, c_row: &mut [f64], k: usize, n: usize) {
    for p in 0..k {
        let av = a[i * k + p];
        if av == 0.0 {
            continue;
        }
        let b_row = &b[p * n..p * n + n];
        for (cj, bj) in c_row.iter_mut().zip(b_row) {
            *cj += av * bj;
        }
    }
}

/// C += A(m,k) * B(k,n); C must be zeroed by the caller when a fresh
/// product is wanted.
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m * k * n >= PAR_WORK {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| mm_row(a, b, i, row, k, n));
    } else {
        for (i, row) in c.chunks_mut(n).enumerate() {
            mm_row(a, b, i, row, k, n);
        }
    }
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    matmul_acc(a, b, &mut c, m, k, n);
    c
}

/// Transpose of a row-major (rows, cols) matrix.
pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

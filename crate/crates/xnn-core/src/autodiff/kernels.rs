//! Dense f64 matrix kernels shared by the tape ops.
//!
//! Every kernel has a sequential body; with the `parallel` feature the outer
//! row loop is split across the rayon pool once the work size crosses
//! [`PAR_THRESHOLD`]. The per-element summation order is identical in both
//! paths, so parallel and sequential builds produce bitwise-equal results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Multiply-accumulate count above which the row loop is parallelized.
/// Below this the rayon dispatch overhead outweighs the split.
pub const PAR_THRESHOLD: usize = 1 << 21;

#[inline]
fn axpy(out: &mut [f64], scale: f64, src: &[f64]) {
    for (o, s) in out.iter_mut().zip(src) {
        *o += scale * s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// out[m x n] += a[m x k] * b[k x n]
pub fn acc_nn(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let row = |out_row: &mut [f64], a_row: &[f64]| {
        for (p, &av) in a_row.iter().enumerate() {
            axpy(out_row, av, &b[p * n..(p + 1) * n]);
        }
    };
    #[cfg(feature = "parallel")]
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(out_row, a_row)| row(out_row, a_row));
        return;
    }
    for (out_row, a_row) in out.chunks_mut(n).zip(a.chunks(k)) {
        row(out_row, a_row);
    }
}

/// out[m x n] += a[m x k] * b[n x k]^T  (row-by-row dot products)
pub fn acc_nt(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let row = |out_row: &mut [f64], a_row: &[f64]| {
        for (j, o) in out_row.iter_mut().enumerate() {
            *o += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    };
    #[cfg(feature = "parallel")]
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(out_row, a_row)| row(out_row, a_row));
        return;
    }
    for (out_row, a_row) in out.chunks_mut(n).zip(a.chunks(k)) {
        row(out_row, a_row);
    }
}

/// out[k x n] += a[m x k]^T * b[m x n]
pub fn acc_tn(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), k * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let row = |out_row: &mut [f64], p: usize| {
        for i in 0..m {
            axpy(out_row, a[i * k + p], &b[i * n..(i + 1) * n]);
        }
    };
    #[cfg(feature = "parallel")]
    if m * k * n >= PAR_THRESHOLD && k > 1 {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(p, out_row)| row(out_row, p));
        return;
    }
    for (p, out_row) in out.chunks_mut(n).enumerate() {
        row(out_row, p);
    }
}

/// c = a[m x k] * b[k x n]
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    acc_nn(&mut out, a, b, m, k, n);
    out
}

/// c = a[m x k] * b[n x k]^T
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    acc_nt(&mut out, a, b, m, k, n);
    out
}

/// out[i][j] += bias[j]
pub fn add_bias_rows(out: &mut [f64], bias: &[f64], n: usize) {
    debug_assert_eq!(out.len() % n, 0);
    debug_assert_eq!(bias.len(), n);
    for row in out.chunks_mut(n) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

/// out[j] += sum over rows of src[i][j]
pub fn acc_colsum(out: &mut [f64], src: &[f64], n: usize) {
    debug_assert_eq!(out.len(), n);
    debug_assert_eq!(src.len() % n, 0);
    for row in src.chunks(n) {
        for (o, s) in out.iter_mut().zip(row) {
            *o += s;
        }
    }
}

/// Sequential-only variants used by the benchmark suite for comparison.
pub mod reference {
    /// Plain triple-loop product, never parallel.
    pub fn matmul_nn_seq(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for (out_row, a_row) in out.chunks_mut(n).zip(a.chunks(k)) {
            for (p, &av) in a_row.iter().enumerate() {
                for (o, bv) in out_row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *o += av * bv;
                }
            }
        }
        out
    }
}

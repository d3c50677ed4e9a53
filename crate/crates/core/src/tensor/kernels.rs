//! Raw forward kernels over row-major `f64` buffers.
//!
//! These are shared by the public tensor API and by [`Tape::replay`](super::Tape::replay),
//! so a replayed tape runs exactly the arithmetic that produced the recorded values.

use super::sparse::SparseMatrix;
use super::Shape;

/// `op(a) · op(b)` where `op` optionally transposes. `a_shape`/`b_shape` are the
/// stored (untransposed) shapes.
pub(crate) fn matmul(a: &[f64], a_shape: Shape, ta: bool, b: &[f64], b_shape: Shape, tb: bool) -> (Shape, Vec<f64>) {
    let (m, k) = if ta { (a_shape[1], a_shape[0]) } else { (a_shape[0], a_shape[1]) };
    let n = if tb { b_shape[0] } else { b_shape[1] };
    let mut out = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return ([m, n], out);
    }
    let (rsa, csa) = if ta { (1, a_shape[1]) } else { (a_shape[1], 1) };
    let (rsb, csb) = if tb { (1, b_shape[1]) } else { (b_shape[1], 1) };
    // SAFETY: the strides describe views that stay within `a` and `b`
    // (rows*cols elements each), and `out` is a dense m×n buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    ([m, n], out)
}

pub(crate) fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn map(a: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    a.iter().map(|&x| f(x)).collect()
}

pub(crate) fn broadcast_to(a: &[f64], from: Shape, to: Shape) -> Vec<f64> {
    let [m, n] = to;
    let mut out = Vec::with_capacity(m * n);
    match from {
        f if f == to => out.extend_from_slice(a),
        [1, 1] => out.resize(m * n, a[0]),
        [1, c] if c == n => {
            for _ in 0..m {
                out.extend_from_slice(a);
            }
        }
        [r, 1] if r == m => {
            for &v in a {
                out.extend(std::iter::repeat(v).take(n));
            }
        }
        _ => unreachable!("broadcast shapes validated by caller"),
    }
    out
}

pub(crate) fn sum(a: &[f64]) -> f64 {
    a.iter().sum()
}

/// Column-wise sum: m×n → 1×n.
pub(crate) fn sum_rows(a: &[f64], shape: Shape) -> Vec<f64> {
    let [_, n] = shape;
    let mut out = vec![0.0; n];
    for row in a.chunks_exact(n.max(1)) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

/// Row-wise sum: m×n → m×1.
pub(crate) fn sum_cols(a: &[f64], shape: Shape) -> Vec<f64> {
    let [m, n] = shape;
    if n == 0 {
        return vec![0.0; m];
    }
    a.chunks_exact(n).map(|row| row.iter().sum()).collect()
}

pub(crate) fn transpose(a: &[f64], shape: Shape) -> Vec<f64> {
    let [m, n] = shape;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

pub(crate) fn spmm(adj: &SparseMatrix, x: &[f64], x_cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; adj.rows() * x_cols];
    for r in 0..adj.rows() {
        let dst = &mut out[r * x_cols..(r + 1) * x_cols];
        for (c, w) in adj.row(r) {
            let src = &x[c * x_cols..(c + 1) * x_cols];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    out
}

pub(crate) fn gather_rows(a: &[f64], cols: usize, idx: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        out.extend_from_slice(&a[i * cols..(i + 1) * cols]);
    }
    out
}

pub(crate) fn scatter_add_rows(a: &[f64], cols: usize, idx: &[usize], out_rows: usize) -> Vec<f64> {
    let mut out = vec![0.0; out_rows * cols];
    for (r, &i) in idx.iter().enumerate() {
        let dst = &mut out[i * cols..(i + 1) * cols];
        for (d, &s) in dst.iter_mut().zip(&a[r * cols..(r + 1) * cols]) {
            *d += s;
        }
    }
    out
}

pub(crate) fn slice_cols(a: &[f64], shape: Shape, start: usize, len: usize) -> Vec<f64> {
    let [m, n] = shape;
    let mut out = Vec::with_capacity(m * len);
    for i in 0..m {
        out.extend_from_slice(&a[i * n + start..i * n + start + len]);
    }
    out
}

pub(crate) fn pad_cols(a: &[f64], shape: Shape, start: usize, total: usize) -> Vec<f64> {
    let [m, n] = shape;
    let mut out = vec![0.0; m * total];
    for i in 0..m {
        out[i * total + start..i * total + start + n].copy_from_slice(&a[i * n..(i + 1) * n]);
    }
    out
}

pub(crate) fn concat_cols(parts: &[(&[f64], Shape)]) -> (Shape, Vec<f64>) {
    let m = parts.first().map_or(0, |p| p.1[0]);
    let total: usize = parts.iter().map(|p| p.1[1]).sum();
    let mut out = Vec::with_capacity(m * total);
    for i in 0..m {
        for (data, [_, n]) in parts {
            out.extend_from_slice(&data[i * n..(i + 1) * n]);
        }
    }
    ([m, total], out)
}

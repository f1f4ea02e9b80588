//! Dense inner loops. Every routine accumulates each output element in a
//! fixed order so the parallel and sequential paths agree bit for bit.

use crate::par;

/// Column block width for the column-parallel reductions.
const COL_BLOCK: usize = 64;
/// Filters per partial buffer in the convolution input gradient.
const FILTER_CHUNK: usize = 32;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut sum = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        sum += x * y;
    }
    sum
}

/// `y += alpha * x`
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    let work = m * k * n;
    if n == 1 {
        par::for_each_row(out, 1, work, |i, o| o[0] = dot(&a[i * k..(i + 1) * k], b));
    } else {
        par::for_each_row(out, n, work, |i, row| {
            row.fill(0.0);
            for p in 0..k {
                axpy(a[i * k + p], &b[p * n..(p + 1) * n], row);
            }
        });
    }
}

/// `da[m×k] += dc[m×n] · bᵀ`
pub(crate) fn matmul_grad_a(dc: &[f64], b: &[f64], m: usize, k: usize, n: usize, da: &mut [f64]) {
    let work = m * k * n;
    if n == 1 {
        par::for_each_row(da, k, work, |i, row| axpy(dc[i], b, row));
    } else {
        par::for_each_row(da, k, work, |i, row| {
            let dci = &dc[i * n..(i + 1) * n];
            for (p, v) in row.iter_mut().enumerate() {
                *v += dot(dci, &b[p * n..(p + 1) * n]);
            }
        });
    }
}

/// `db[k×n] += aᵀ · dc`
pub(crate) fn matmul_grad_b(a: &[f64], dc: &[f64], m: usize, k: usize, n: usize, db: &mut [f64]) {
    let work = m * k * n;
    if n == 1 {
        par::for_each_row(db, COL_BLOCK, work, |blk, cols| {
            let start = blk * COL_BLOCK;
            for i in 0..m {
                axpy(dc[i], &a[i * k + start..i * k + start + cols.len()], cols);
            }
        });
    } else {
        par::for_each_row(db, n, work, |p, row| {
            for i in 0..m {
                axpy(a[i * k + p], &dc[i * n..(i + 1) * n], row);
            }
        });
    }
}

/// Geometry of a bank of valid 1-D convolutions over a `[len×dim]` sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub filters: usize,
    pub kernel: usize,
    pub dim: usize,
    pub len: usize,
}

impl ConvShape {
    pub fn positions(&self) -> usize {
        self.len + 1 - self.kernel
    }

    fn window(&self) -> usize {
        self.kernel * self.dim
    }
}

/// `out[f, t] = bias[f] + <kernel_f, seq[t..t+k]>`
pub(crate) fn conv1d(seq: &[f64], kernels: &[f64], bias: &[f64], s: ConvShape, out: &mut [f64]) {
    let (w, n) = (s.window(), s.positions());
    par::for_each_row(out, n, s.filters * n * w, |f, row| {
        let kf = &kernels[f * w..(f + 1) * w];
        for (t, o) in row.iter_mut().enumerate() {
            *o = bias[f] + dot(kf, &seq[t * s.dim..t * s.dim + w]);
        }
    });
}

pub(crate) fn conv1d_grad_kernels(seq: &[f64], grad: &[f64], s: ConvShape, dk: &mut [f64]) {
    let (w, n) = (s.window(), s.positions());
    par::for_each_row(dk, w, s.filters * n * w, |f, row| {
        for t in 0..n {
            axpy(grad[f * n + t], &seq[t * s.dim..t * s.dim + w], row);
        }
    });
}

pub(crate) fn conv1d_grad_seq(kernels: &[f64], grad: &[f64], s: ConvShape, dseq: &mut [f64]) {
    let (w, n) = (s.window(), s.positions());
    let chunks = s.filters.div_ceil(FILTER_CHUNK);
    let partials = par::map_range(chunks, s.filters * n * w, |c| {
        let mut part = vec![0.0; dseq.len()];
        let end = ((c + 1) * FILTER_CHUNK).min(s.filters);
        for f in c * FILTER_CHUNK..end {
            let kf = &kernels[f * w..(f + 1) * w];
            for t in 0..n {
                axpy(grad[f * n + t], kf, &mut part[t * s.dim..t * s.dim + w]);
            }
        }
        part
    });
    for part in partials {
        axpy(1.0, &part, dseq);
    }
}

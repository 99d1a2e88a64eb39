//! im2col convolution kernels.

use serde::{Deserialize, Serialize};

use super::Float;
use crate::par;

/// Geometry of a 2-D convolution with zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, pad: usize, dilation: usize) -> Self {
        ConvGeom {
            kernel,
            stride,
            pad,
            dilation,
        }
    }

    /// "Same"-padded stride-1 convolution.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        ConvGeom::new(kernel, 1, dilation * (kernel - 1) / 2, dilation)
    }

    /// Output extent along one axis, or `None` if the kernel does not fit.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = len + 2 * self.pad;
        if padded < span || self.stride == 0 {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    /// Range of output columns whose tap at kernel offset `k` lands inside
    /// an input row of length `len`.
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let off = (k * self.dilation) as isize - self.pad as isize;
        let s = self.stride as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= len - 1, exclusive bound returned
        let hi_incl = (len as isize - 1 - off).div_euclid(s);
        let lo = lo.min(out_len as isize);
        let hi = (hi_incl + 1).clamp(0, out_len as isize).max(lo);
        (lo as usize, hi as usize)
    }
}

pub(crate) struct ConvShape {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvShape {
    fn k(&self, g: &ConvGeom) -> usize {
        self.cin * g.kernel * g.kernel
    }
    fn n(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<T: Float>(x: &[T], s: &ConvShape, g: &ConvGeom) -> Vec<T> {
    let n = s.n();
    let kk = g.kernel * g.kernel;
    let mut cols = vec![T::zero(); s.k(g) * n];
    par::for_chunks_mut(&mut cols, n, s.k(g) * n, |row, out| {
        let ci = row / kk;
        let ky = (row % kk) / g.kernel;
        let kx = row % g.kernel;
        let plane = &x[ci * s.h * s.w..(ci + 1) * s.h * s.w];
        let (x_lo, x_hi) = g.valid_range(kx, s.w, s.wo);
        let (y_lo, y_hi) = g.valid_range(ky, s.h, s.ho);
        if x_lo == x_hi {
            return;
        }
        for oy in y_lo..y_hi {
            let iy = oy * g.stride + ky * g.dilation - g.pad;
            let src = &plane[iy * s.w..(iy + 1) * s.w];
            let dst = &mut out[oy * s.wo..(oy + 1) * s.wo];
            let base = kx * g.dilation;
            if g.stride == 1 {
                let start = x_lo + base - g.pad;
                dst[x_lo..x_hi].copy_from_slice(&src[start..start + (x_hi - x_lo)]);
            } else {
                for ox in x_lo..x_hi {
                    dst[ox] = src[ox * g.stride + base - g.pad];
                }
            }
        }
    });
    cols
}

fn col2im<T: Float>(cols: &[T], s: &ConvShape, g: &ConvGeom) -> Vec<T> {
    let n = s.n();
    let kk = g.kernel * g.kernel;
    let plane_len = s.h * s.w;
    let mut dx = vec![T::zero(); s.cin * plane_len];
    par::for_chunks_mut(&mut dx, plane_len, s.k(g) * n, |ci, plane| {
        for ky in 0..g.kernel {
            let (y_lo, y_hi) = g.valid_range(ky, s.h, s.ho);
            for kx in 0..g.kernel {
                let (x_lo, x_hi) = g.valid_range(kx, s.w, s.wo);
                let row = ci * kk + ky * g.kernel + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in y_lo..y_hi {
                    let iy = oy * g.stride + ky * g.dilation - g.pad;
                    let dst = &mut plane[iy * s.w..(iy + 1) * s.w];
                    let srow = &src[oy * s.wo..(oy + 1) * s.wo];
                    let base = kx * g.dilation;
                    for ox in x_lo..x_hi {
                        dst[ox * g.stride + base - g.pad] += srow[ox];
                    }
                }
            }
        }
    });
    dx
}

/// `c[m × n] = a[m × k] · b[k × n]` with `a`, `c` row-major and `b` given by
/// strides; rows of `c` are split across tasks when the product is large.
fn gemm_rows<T: Float>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_strides: (isize, isize),
    b: &[T],
    b_strides: (isize, isize),
    beta: T,
    c: &mut [T],
) {
    let work = m * k * n;
    let rows_per_task = if par::enabled() && work >= 4 * par::MIN_PARALLEL_LEN {
        m.div_ceil(8).max(1)
    } else {
        m.max(1)
    };
    par::for_chunks_mut(c, rows_per_task * n, work, |i, c_chunk| {
        let r0 = i * rows_per_task;
        let rows = c_chunk.len() / n;
        let a_off = (r0 as isize * a_strides.0) as usize;
        T::gemm(
            rows,
            k,
            n,
            T::one(),
            &a[a_off..],
            a_strides,
            b,
            b_strides,
            beta,
            c_chunk,
            (n as isize, 1),
        );
    });
}

/// Forward convolution. Returns the output plane stack and the column
/// matrix (kept for the weight gradient; empty for pointwise convs, which
/// read the input directly).
pub(crate) fn conv_forward<T: Float>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    s: &ConvShape,
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>) {
    let n = s.n();
    let k = s.k(g);
    let cols = if g.is_pointwise() {
        Vec::new()
    } else {
        im2col(x, s, g)
    };
    let b_mat: &[T] = if g.is_pointwise() { x } else { &cols };
    let mut out = vec![T::zero(); s.cout * n];
    if let Some(bias) = bias {
        for (co, row) in out.chunks_mut(n).enumerate() {
            row.iter_mut().for_each(|v| *v = bias[co]);
        }
    }
    gemm_rows(
        s.cout,
        k,
        n,
        weight,
        (k as isize, 1),
        b_mat,
        (n as isize, 1),
        T::one(),
        &mut out,
    );
    (out, cols)
}

/// Gradient of the convolution input.
pub(crate) fn conv_backward_input<T: Float>(
    grad_out: &[T],
    weight: &[T],
    s: &ConvShape,
    g: &ConvGeom,
) -> Vec<T> {
    let n = s.n();
    let k = s.k(g);
    let mut dcols = vec![T::zero(); k * n];
    // dcols[k × n] = weightᵀ[k × cout] · grad_out[cout × n]
    gemm_rows(
        k,
        s.cout,
        n,
        weight,
        (1, k as isize),
        grad_out,
        (n as isize, 1),
        T::zero(),
        &mut dcols,
    );
    if g.is_pointwise() {
        dcols
    } else {
        col2im(&dcols, s, g)
    }
}

/// Gradients of the weight (accumulated into `dw`) and bias.
pub(crate) fn conv_backward_params<T: Float>(
    grad_out: &[T],
    x: &[T],
    cols: &[T],
    s: &ConvShape,
    g: &ConvGeom,
    dw: &mut [T],
    db: Option<&mut [T]>,
) {
    let n = s.n();
    let k = s.k(g);
    let b_mat: &[T] = if g.is_pointwise() { x } else { cols };
    // dw[cout × k] += grad_out[cout × n] · colsᵀ[n × k]
    gemm_rows(
        s.cout,
        n,
        k,
        grad_out,
        (n as isize, 1),
        b_mat,
        (1, n as isize),
        T::one(),
        dw,
    );
    if let Some(db) = db {
        for (co, row) in grad_out.chunks(n).enumerate() {
            db[co] += row.iter().copied().sum::<T>();
        }
    }
}

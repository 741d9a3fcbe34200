//! Raw slice kernels behind the tape ops.
//!
//! Parallel kernels split work over output rows or planes only; every output
//! element is reduced by a single thread in a fixed order, so results do not
//! depend on the thread count.

use rayon::prelude::*;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Below this many multiply-adds a kernel stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 15;

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // Eight fixed lanes let the compiler vectorise without reassociating.
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for k in chunks * 8..a.len() {
        tail = tail + a[k] * b[k];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

fn rows_mut<T: Scalar>(out: &mut [T], width: usize, work: usize, f: impl Fn(usize, &mut [T]) + Sync + Send) {
    if work >= PAR_THRESHOLD {
        out.par_chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
    } else {
        out.chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
    }
}

/// `a (m×n) · b (n×p)`.
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * p];
    rows_mut(&mut out, p, m * n * p, |i, row| {
        for k in 0..n {
            axpy(a[i * n + k], &b[k * p..(k + 1) * p], row);
        }
    });
    out
}

/// `a (m×n) · bᵀ` where `b` is `p×n`.
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * p];
    rows_mut(&mut out, p, m * n * p, |i, row| {
        let ai = &a[i * n..(i + 1) * n];
        for (j, o) in row.iter_mut().enumerate() {
            *o = dot(ai, &b[j * n..(j + 1) * n]);
        }
    });
    out
}

/// `aᵀ · b` where `a` is `r×m` and `b` is `r×p`; result `m×p`.
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], r: usize, m: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * p];
    rows_mut(&mut out, p, r * m * p, |i, row| {
        for k in 0..r {
            axpy(a[k * m + i], &b[k * p..(k + 1) * p], row);
        }
    });
    out
}

/// Geometry of a 3×3, stride-1, pad-1 convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvGeom {
    fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Output positions `y` for which `y + dy - 1` is inside the input.
    #[inline]
    fn valid(len: usize, d: usize) -> std::ops::Range<usize> {
        let lo = if d == 0 { 1 } else { 0 };
        let hi = if d == 2 { len.saturating_sub(1) } else { len };
        lo..hi.max(lo)
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(g: ConvGeom, x: &[T], k: &[T], bias: &[T]) -> Vec<T> {
    let plane = g.plane();
    let mut out = vec![T::zero(); g.batch * g.c_out * plane];
    let work = g.batch * g.c_out * g.c_in * 9 * plane;
    rows_mut(&mut out, plane, work, |idx, dst| {
        let (n, o) = (idx / g.c_out, idx % g.c_out);
        dst.fill(bias[o]);
        for c in 0..g.c_in {
            let src = &x[(n * g.c_in + c) * plane..(n * g.c_in + c + 1) * plane];
            for dy in 0..3 {
                for dx in 0..3 {
                    let wv = k[((o * g.c_in + c) * 3 + dy) * 3 + dx];
                    for y in ConvGeom::valid(g.h, dy) {
                        let sy = y + dy - 1;
                        for xx in ConvGeom::valid(g.w, dx) {
                            let sx = xx + dx - 1;
                            dst[y * g.w + xx] = dst[y * g.w + xx] + wv * src[sy * g.w + sx];
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradients `(d input, d kernels, d bias)` of a convolution given the output gradient.
pub(crate) fn conv2d_backward<T: Scalar>(
    g: ConvGeom,
    x: &[T],
    k: &[T],
    grad: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let plane = g.plane();
    let work = g.batch * g.c_out * g.c_in * 9 * plane;

    let mut dx = vec![T::zero(); g.batch * g.c_in * plane];
    rows_mut(&mut dx, plane, work, |idx, dst| {
        let (n, c) = (idx / g.c_in, idx % g.c_in);
        for o in 0..g.c_out {
            let go = &grad[(n * g.c_out + o) * plane..(n * g.c_out + o + 1) * plane];
            for dy in 0..3 {
                for ddx in 0..3 {
                    let wv = k[((o * g.c_in + c) * 3 + dy) * 3 + ddx];
                    for y in ConvGeom::valid(g.h, dy) {
                        let sy = y + dy - 1;
                        for xx in ConvGeom::valid(g.w, ddx) {
                            let sx = xx + ddx - 1;
                            dst[sy * g.w + sx] = dst[sy * g.w + sx] + wv * go[y * g.w + xx];
                        }
                    }
                }
            }
        }
    });

    let mut dk = vec![T::zero(); g.c_out * g.c_in * 9];
    rows_mut(&mut dk, g.c_in * 9, work, |o, dst| {
        for c in 0..g.c_in {
            for dy in 0..3 {
                for ddx in 0..3 {
                    let mut acc = T::zero();
                    for n in 0..g.batch {
                        let go = &grad[(n * g.c_out + o) * plane..(n * g.c_out + o + 1) * plane];
                        let src = &x[(n * g.c_in + c) * plane..(n * g.c_in + c + 1) * plane];
                        for y in ConvGeom::valid(g.h, dy) {
                            let sy = y + dy - 1;
                            for xx in ConvGeom::valid(g.w, ddx) {
                                acc = acc + go[y * g.w + xx] * src[sy * g.w + xx + ddx - 1];
                            }
                        }
                    }
                    dst[(c * 3 + dy) * 3 + ddx] = acc;
                }
            }
        }
    });

    let mut db = vec![T::zero(); g.c_out];
    for n in 0..g.batch {
        for (o, d) in db.iter_mut().enumerate() {
            let go = &grad[(n * g.c_out + o) * plane..(n * g.c_out + o + 1) * plane];
            *d = *d + go.iter().copied().sum::<T>();
        }
    }
    (dx, dk, db)
}

/// Direct quintuple-loop convolution over a single `C×H×W` input: every
/// output element is `bias + Σ_{c,dy,dx} input·kernel` with out-of-range
/// input read as zero. Used as the reference for the optimised kernel.
pub fn conv2d_naive<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[c_in, h, w], &[c_out, kc, 3, 3]) = (input.shape(), kernels.shape()) else {
        return Err(Error::shape("conv2d_naive", "expected C×H×W input and O×C×3×3 kernels"));
    };
    if kc != c_in || bias.len() != c_out {
        return Err(Error::shape("conv2d_naive", "channel mismatch"));
    }
    let mut out = Vec::with_capacity(c_out * h * w);
    for o in 0..c_out {
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias.data()[o];
                for c in 0..c_in {
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let (sy, sx) = (y as isize + dy as isize - 1, x as isize + dx as isize - 1);
                            let v = if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                T::zero()
                            } else {
                                input.at(&[c, sy as usize, sx as usize])
                            };
                            acc = acc + v * kernels.at(&[o, c, dy, dx]);
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    Tensor::new(&[c_out, h, w], out)
}

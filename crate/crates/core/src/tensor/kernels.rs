//! Slice-level numeric kernels shared by the tape operations.
//!
//! Convolution is lowered to im2col followed by a row-major matrix product so
//! the innermost loops run over contiguous spatial rows.

use super::Real;

/// Geometry of one 2D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Rows of the im2col matrix.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }
}

#[inline]
pub(crate) fn axpy<T: Real>(out: &mut [T], alpha: T, x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
/// The summation order is fixed, so results are deterministic.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    let lo = (acc[0] + acc[4]) + (acc[1] + acc[5]);
    let hi = (acc[2] + acc[6]) + (acc[3] + acc[7]);
    (lo + hi) + tail
}

#[inline]
pub(crate) fn sum<T: Real>(a: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let mut chunks = a.chunks_exact(8);
    for x in &mut chunks {
        for i in 0..8 {
            acc[i] += x[i];
        }
    }
    let mut tail = T::zero();
    for &x in chunks.remainder() {
        tail += x;
    }
    let lo = (acc[0] + acc[4]) + (acc[1] + acc[5]);
    let hi = (acc[2] + acc[6]) + (acc[3] + acc[7]);
    (lo + hi) + tail
}

/// Range of output columns `ox` whose source column `ox * stride + k - padding`
/// falls inside `[0, width)`.
fn valid_range(
    out_len: usize,
    len: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> (usize, usize) {
    // ox * stride + k >= padding
    let lo = if k >= padding {
        0
    } else {
        (padding - k).div_ceil(stride)
    };
    // ox * stride + k - padding <= len - 1
    let limit = len + padding;
    let hi = if limit > k {
        ((limit - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

pub(crate) fn im2col<T: Real>(input: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let plane = g.out_plane();
    debug_assert_eq!(cols.len(), g.patch_len() * plane);
    cols.fill(T::zero());
    let mut row = 0;
    for c in 0..g.in_channels {
        let src = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for kh in 0..g.kernel_h {
            let (oy_lo, oy_hi) = valid_range(g.out_h, g.height, kh, g.stride, g.padding);
            for kw in 0..g.kernel_w {
                let (ox_lo, ox_hi) = valid_range(g.out_w, g.width, kw, g.stride, g.padding);
                if ox_lo == ox_hi {
                    row += 1;
                    continue;
                }
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + kh - g.padding;
                    let src_row = &src[iy * g.width..(iy + 1) * g.width];
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if g.stride == 1 {
                        let ix_lo = ox_lo + kw - g.padding;
                        let n = ox_hi - ox_lo;
                        dst_row[ox_lo..ox_hi].copy_from_slice(&src_row[ix_lo..ix_lo + n]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst_row[ox] = src_row[ox * g.stride + kw - g.padding];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add the im2col matrix back into image layout (adjoint of `im2col`).
pub(crate) fn col2im<T: Real>(cols: &[T], g: &ConvGeometry, out: &mut [T]) {
    let plane = g.out_plane();
    let mut row = 0;
    for c in 0..g.in_channels {
        let dst = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for kh in 0..g.kernel_h {
            let (oy_lo, oy_hi) = valid_range(g.out_h, g.height, kh, g.stride, g.padding);
            for kw in 0..g.kernel_w {
                let (ox_lo, ox_hi) = valid_range(g.out_w, g.width, kw, g.stride, g.padding);
                if ox_lo == ox_hi {
                    row += 1;
                    continue;
                }
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + kh - g.padding;
                    let dst_row = &mut dst[iy * g.width..(iy + 1) * g.width];
                    let src_row = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    if g.stride == 1 {
                        let ix_lo = ox_lo + kw - g.padding;
                        let n = ox_hi - ox_lo;
                        for (d, &s) in dst_row[ix_lo..ix_lo + n]
                            .iter_mut()
                            .zip(&src_row[ox_lo..ox_hi])
                        {
                            *d += s;
                        }
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst_row[ox * g.stride + kw - g.padding] += src_row[ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn lowered<'a, T: Real>(input: &'a [T], g: &ConvGeometry, scratch: &'a mut Vec<T>) -> &'a [T] {
    if g.is_pointwise() {
        input
    } else {
        scratch.resize(g.patch_len() * g.out_plane(), T::zero());
        im2col(input, g, scratch);
        scratch
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    input: &[T],
    weight: &[T],
    bias: &[T],
    g: &ConvGeometry,
) -> Vec<T> {
    let plane = g.out_plane();
    let k = g.patch_len();
    let mut scratch = Vec::new();
    let cols = lowered(input, g, &mut scratch);
    let mut out = vec![T::zero(); g.out_channels * plane];
    for (co, out_row) in out.chunks_exact_mut(plane).enumerate() {
        out_row.fill(bias[co]);
        let w_row = &weight[co * k..(co + 1) * k];
        for (kk, &w) in w_row.iter().enumerate() {
            if w != T::zero() {
                axpy(out_row, w, &cols[kk * plane..(kk + 1) * plane]);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Real>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeometry,
    need: [bool; 3],
) -> ConvGrads<T> {
    let plane = g.out_plane();
    let k = g.patch_len();
    let [need_input, need_weight, need_bias] = need;

    let bias = need_bias.then(|| grad_out.chunks_exact(plane).map(sum).collect());

    let weight_grad = need_weight.then(|| {
        let mut scratch = Vec::new();
        let cols = lowered(input, g, &mut scratch);
        let mut gw = vec![T::zero(); g.out_channels * k];
        for (co, gw_row) in gw.chunks_exact_mut(k).enumerate() {
            let go = &grad_out[co * plane..(co + 1) * plane];
            for (kk, slot) in gw_row.iter_mut().enumerate() {
                *slot = dot(go, &cols[kk * plane..(kk + 1) * plane]);
            }
        }
        gw
    });

    let input_grad = need_input.then(|| {
        let mut gcols = vec![T::zero(); k * plane];
        for co in 0..g.out_channels {
            let go = &grad_out[co * plane..(co + 1) * plane];
            let w_row = &weight[co * k..(co + 1) * k];
            for (kk, &w) in w_row.iter().enumerate() {
                if w != T::zero() {
                    axpy(&mut gcols[kk * plane..(kk + 1) * plane], w, go);
                }
            }
        }
        if g.is_pointwise() {
            gcols
        } else {
            let mut gin = vec![T::zero(); g.in_channels * g.height * g.width];
            col2im(&gcols, g, &mut gin);
            gin
        }
    });

    ConvGrads {
        input: input_grad,
        weight: weight_grad,
        bias,
    }
}

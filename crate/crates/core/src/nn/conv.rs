//! im2col-based 1-D convolution kernels shared by the forward and transposed
//! convolutions.

use crate::error::{invalid, Result};
use crate::nn::scalar::matmul;
use crate::nn::Scalar;

/// Kernel width, stride and zero padding of a 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub width: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvGeom {
    pub fn new(width: usize, stride: usize, pad_left: usize, pad_right: usize) -> Result<Self> {
        if width == 0 || stride == 0 {
            return Err(invalid!("kernel width and stride must be >= 1 (W={width}, S={stride})"));
        }
        Ok(ConvGeom { width, stride, pad_left, pad_right })
    }

    /// Zero padding that makes the output length `ceil(len / stride)`, split
    /// as evenly as possible with the extra sample on the right.
    pub fn same(width: usize, stride: usize, len: usize) -> Result<Self> {
        if width == 0 || stride == 0 {
            return Err(invalid!("kernel width and stride must be >= 1 (W={width}, S={stride})"));
        }
        let out = len.div_ceil(stride).max(1);
        let total = ((out - 1) * stride + width).saturating_sub(len);
        let left = total / 2;
        Ok(ConvGeom { width, stride, pad_left: left, pad_right: total - left })
    }

    /// Geometry of a transposed convolution that upsamples by exactly `stride`:
    /// the adjoint of a stride-`stride` convolution over `n * stride` samples
    /// that yields `n` outputs.
    pub fn upsample(width: usize, stride: usize) -> Result<Self> {
        if width < stride {
            return Err(invalid!("transposed kernel width {width} must be >= stride {stride}"));
        }
        let total = width - stride;
        ConvGeom::new(width, stride, total / 2, total - total / 2)
    }

    pub fn out_len(&self, len: usize) -> Result<usize> {
        let padded = len + self.pad_left + self.pad_right;
        if padded < self.width {
            return Err(invalid!(
                "padded input length {padded} is shorter than kernel width {}",
                self.width
            ));
        }
        Ok((padded - self.width) / self.stride + 1)
    }

    /// Output indices `j` in `[lo, hi)` whose window tap `k` lands inside an
    /// input of length `len`.
    #[inline]
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        // position = j * stride + k - pad_left must lie in [0, len)
        let s = self.stride as isize;
        let shift = k as isize - self.pad_left as isize;
        let lo = if shift >= 0 { 0 } else { ((-shift) + s - 1) / s };
        let hi = (len as isize - shift + s - 1) / s;
        let lo = (lo.max(0) as usize).min(out_len);
        let hi = (hi.max(0) as usize).min(out_len);
        (lo, hi.max(lo))
    }
}

/// Unfolds `x` (`channels x len`) into `col` (`channels * width x out_len`).
pub(crate) fn im2col<F: Scalar>(x: &[F], channels: usize, len: usize, g: &ConvGeom, out_len: usize, col: &mut [F]) {
    debug_assert_eq!(x.len(), channels * len);
    debug_assert_eq!(col.len(), channels * g.width * out_len);
    for c in 0..channels {
        let xs = &x[c * len..(c + 1) * len];
        for k in 0..g.width {
            let row = &mut col[(c * g.width + k) * out_len..(c * g.width + k + 1) * out_len];
            let (lo, hi) = g.valid_range(k, len, out_len);
            row[..lo].fill(F::zero());
            row[hi..].fill(F::zero());
            let offset = k as isize - g.pad_left as isize;
            if hi == lo {
                continue;
            }
            if g.stride == 1 {
                let start = (lo as isize + offset) as usize;
                row[lo..hi].copy_from_slice(&xs[start..start + (hi - lo)]);
            } else {
                for (j, r) in row.iter_mut().enumerate().take(hi).skip(lo) {
                    *r = xs[(j as isize * g.stride as isize + offset) as usize];
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `col` back into `x`, accumulating.
pub(crate) fn col2im_add<F: Scalar>(col: &[F], channels: usize, len: usize, g: &ConvGeom, out_len: usize, x: &mut [F]) {
    debug_assert_eq!(x.len(), channels * len);
    for c in 0..channels {
        let xs = &mut x[c * len..(c + 1) * len];
        for k in 0..g.width {
            let row = &col[(c * g.width + k) * out_len..(c * g.width + k + 1) * out_len];
            let (lo, hi) = g.valid_range(k, len, out_len);
            let offset = k as isize - g.pad_left as isize;
            for (j, &v) in row.iter().enumerate().take(hi).skip(lo) {
                xs[(j as isize * g.stride as isize + offset) as usize] += v;
            }
        }
    }
}

/// `y[b] = w (c_out x c_in*W) * im2col(x[b])`.
pub(crate) fn conv1d_forward<F: Scalar>(
    x: &[F],
    batch: usize,
    c_in: usize,
    len: usize,
    w: &[F],
    c_out: usize,
    g: &ConvGeom,
) -> Result<(Vec<F>, usize)> {
    let out_len = g.out_len(len)?;
    let k = c_in * g.width;
    let mut y = vec![F::zero(); batch * c_out * out_len];
    if c_in == 1 {
        for b in 0..batch {
            let xp = padded(&x[b * len..(b + 1) * len], g);
            let yb = &mut y[b * c_out * out_len..(b + 1) * c_out * out_len];
            // Hankel view: element (k, j) of the unfolded input is xp[j * stride + k].
            F::gemm(c_out, g.width, out_len, F::one(), w, g.width as isize, 1, &xp, 1, g.stride as isize, F::zero(), yb, out_len as isize, 1);
        }
        return Ok((y, out_len));
    }
    let mut col = vec![F::zero(); k * out_len];
    for b in 0..batch {
        im2col(&x[b * c_in * len..(b + 1) * c_in * len], c_in, len, g, out_len, &mut col);
        matmul(c_out, k, out_len, w, false, &col, false, &mut y[b * c_out * out_len..(b + 1) * c_out * out_len], false);
    }
    Ok((y, out_len))
}

fn padded<F: Scalar>(x: &[F], g: &ConvGeom) -> Vec<F> {
    let mut xp = vec![F::zero(); x.len() + g.pad_left + g.pad_right];
    xp[g.pad_left..g.pad_left + x.len()].copy_from_slice(x);
    xp
}

/// Gradients of [`conv1d_forward`] with respect to the input (optional) and kernel.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward<F: Scalar>(
    x: &[F],
    batch: usize,
    c_in: usize,
    len: usize,
    w: &[F],
    c_out: usize,
    g: &ConvGeom,
    out_len: usize,
    dy: &[F],
    mut dx: Option<&mut [F]>,
    dw: Option<&mut [F]>,
) {
    let k = c_in * g.width;
    let mut dw = dw;
    if c_in == 1 && dx.is_none() {
        if let Some(dw) = dw.as_deref_mut() {
            for b in 0..batch {
                let xp = padded(&x[b * len..(b + 1) * len], g);
                let dyb = &dy[b * c_out * out_len..(b + 1) * c_out * out_len];
                F::gemm(c_out, out_len, g.width, F::one(), dyb, out_len as isize, 1, &xp, g.stride as isize, 1, F::one(), dw, g.width as isize, 1);
            }
        }
        return;
    }
    let mut col = vec![F::zero(); k * out_len];
    let mut dcol = vec![F::zero(); k * out_len];
    for b in 0..batch {
        let dyb = &dy[b * c_out * out_len..(b + 1) * c_out * out_len];
        if let Some(dw) = dw.as_deref_mut() {
            im2col(&x[b * c_in * len..(b + 1) * c_in * len], c_in, len, g, out_len, &mut col);
            matmul(c_out, out_len, k, dyb, false, &col, true, dw, true);
        }
        if let Some(dx) = dx.as_deref_mut() {
            matmul(k, c_out, out_len, w, true, dyb, false, &mut dcol, false);
            col2im_add(&dcol, c_in, len, g, out_len, &mut dx[b * c_in * len..(b + 1) * c_in * len]);
        }
    }
}

/// Transposed convolution: `x[b]` (`c_in x n`) with kernel `c_in x c_out x W`
/// to `c_out x n*stride`.
pub(crate) fn tconv1d_forward<F: Scalar>(
    x: &[F],
    batch: usize,
    c_in: usize,
    n: usize,
    w: &[F],
    c_out: usize,
    g: &ConvGeom,
) -> Vec<F> {
    let len = n * g.stride;
    let k = c_out * g.width;
    let mut y = vec![F::zero(); batch * c_out * len];
    let mut col = vec![F::zero(); k * n];
    for b in 0..batch {
        matmul(k, c_in, n, w, true, &x[b * c_in * n..(b + 1) * c_in * n], false, &mut col, false);
        col2im_add(&col, c_out, len, g, n, &mut y[b * c_out * len..(b + 1) * c_out * len]);
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn tconv1d_backward<F: Scalar>(
    x: &[F],
    batch: usize,
    c_in: usize,
    n: usize,
    w: &[F],
    c_out: usize,
    g: &ConvGeom,
    dy: &[F],
    mut dx: Option<&mut [F]>,
    mut dw: Option<&mut [F]>,
) {
    let len = n * g.stride;
    let k = c_out * g.width;
    let mut col = vec![F::zero(); k * n];
    for b in 0..batch {
        im2col(&dy[b * c_out * len..(b + 1) * c_out * len], c_out, len, g, n, &mut col);
        if let Some(dx) = dx.as_deref_mut() {
            matmul(c_in, k, n, w, false, &col, false, &mut dx[b * c_in * n..(b + 1) * c_in * n], true);
        }
        if let Some(dw) = dw.as_deref_mut() {
            matmul(c_in, n, k, &x[b * c_in * n..(b + 1) * c_in * n], false, &col, true, dw, true);
        }
    }
}

//! Raw convolution and blur kernels on `[N, C, H, W]` buffers.
//!
//! Horizontal padding wraps around (left and right edges are padded with
//! columns from the opposite side); vertical padding is zero-fill. The three
//! convolution kernels are mutually adjoint, which is what the autodiff
//! rules rely on:
//!
//! * `conv2d`: `y = K * x`
//! * `conv2d_transpose`: `x' = Kᵀ y` (adjoint in `x`)
//! * `conv2d_kernel_grad`: `dK = x ⋆ dy` (adjoint in `K`)
//!
//! Every output element is accumulated in a fixed row-major order, so the
//! results are bitwise reproducible and independent of the thread count.

use rayon::prelude::*;

use crate::error::{Result, TensorError};

/// Stride and padding of a 2-D convolution. `pad.0` rows of zeros are added
/// above and below; `pad.1` columns are wrapped around on each side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ConvGeom {
    pub fn new(stride: (usize, usize), pad: (usize, usize)) -> Self {
        ConvGeom { stride, pad }
    }

    /// Stride 1, no padding.
    pub fn valid() -> Self {
        ConvGeom::new((1, 1), (0, 0))
    }

    /// Spatial output size of a forward convolution.
    pub fn conv_out(&self, input: (usize, usize), kernel: (usize, usize)) -> Result<(usize, usize)> {
        let (h, w) = input;
        let (kh, kw) = kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.pad;
        if sh == 0 || sw == 0 {
            return Err(TensorError::shape("conv2d", "stride must be >= 1"));
        }
        if pw > w {
            return Err(TensorError::shape(
                "conv2d",
                format!("circular pad {pw} wider than input width {w}"),
            ));
        }
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(TensorError::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {h}x{w}"),
            ));
        }
        Ok(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
    }

    /// Spatial output size of a transposed convolution, i.e. the input size
    /// of the forward convolution it is the adjoint of.
    pub fn transpose_out(
        &self,
        input: (usize, usize),
        kernel: (usize, usize),
    ) -> Result<(usize, usize)> {
        let (h, w) = input;
        let (kh, kw) = kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.pad;
        if h == 0 || w == 0 || sh == 0 || sw == 0 {
            return Err(TensorError::shape("conv2d_transpose", "empty input or zero stride"));
        }
        let oh = ((h - 1) * sh + kh)
            .checked_sub(2 * ph)
            .ok_or_else(|| TensorError::shape("conv2d_transpose", "padding too large"))?;
        let ow = ((w - 1) * sw + kw)
            .checked_sub(2 * pw)
            .ok_or_else(|| TensorError::shape("conv2d_transpose", "padding too large"))?;
        Ok((oh, ow))
    }
}

/// Shape bookkeeping shared by the three convolution kernels.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvDims {
    fn hp(&self, geom: &ConvGeom) -> usize {
        self.h + 2 * geom.pad.0
    }
    fn wp(&self, geom: &ConvGeom) -> usize {
        self.w + 2 * geom.pad.1
    }
}

/// Copies `x` into a buffer padded with zero rows and wrapped columns.
fn pad_input(x: &[f32], d: &ConvDims, geom: &ConvGeom) -> Vec<f32> {
    let (ph, pw) = geom.pad;
    let (hp, wp) = (d.hp(geom), d.wp(geom));
    let mut out = vec![0.0f32; d.n * d.c * hp * wp];
    out.par_chunks_mut(hp * wp)
        .zip(x.par_chunks(d.h * d.w))
        .for_each(|(dst, src)| {
            for r in 0..d.h {
                let row = &src[r * d.w..(r + 1) * d.w];
                let drow = &mut dst[(r + ph) * wp..(r + ph + 1) * wp];
                for (q, v) in drow.iter_mut().enumerate() {
                    *v = row[(q + d.w * pw - pw) % d.w];
                }
            }
        });
    out
}

/// Unrolls one padded sample into a `[C·kh·kw, ho·wo]` patch matrix.
fn im2col(xp: &[f32], d: &ConvDims, geom: &ConvGeom, col: &mut [f32]) {
    let (hp, wp) = (d.hp(geom), d.wp(geom));
    let (sh, sw) = geom.stride;
    let plane = d.ho * d.wo;
    for c in 0..d.c {
        let xplane = &xp[c * hp * wp..(c + 1) * hp * wp];
        for dh in 0..d.kh {
            for dw in 0..d.kw {
                let row = &mut col[((c * d.kh + dh) * d.kw + dw) * plane..][..plane];
                for oh in 0..d.ho {
                    let prow = &xplane[(oh * sh + dh) * wp..];
                    for (ow, v) in row[oh * d.wo..(oh + 1) * d.wo].iter_mut().enumerate() {
                        *v = prow[ow * sw + dw];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates a patch matrix into a padded sample.
fn col2im(col: &[f32], d: &ConvDims, geom: &ConvGeom, xp: &mut [f32]) {
    let (hp, wp) = (d.hp(geom), d.wp(geom));
    let (sh, sw) = geom.stride;
    let plane = d.ho * d.wo;
    for c in 0..d.c {
        let xplane = &mut xp[c * hp * wp..(c + 1) * hp * wp];
        for dh in 0..d.kh {
            for dw in 0..d.kw {
                let row = &col[((c * d.kh + dh) * d.kw + dw) * plane..][..plane];
                for oh in 0..d.ho {
                    let base = (oh * sh + dh) * wp + dw;
                    for (ow, &v) in row[oh * d.wo..(oh + 1) * d.wo].iter().enumerate() {
                        xplane[base + ow * sw] += v;
                    }
                }
            }
        }
    }
}

/// `c = a·b (+ c when accumulate)` for row-major `a: m×k`, `b: k×n`, with
/// optional transposition of either operand given by its strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (isize, isize),
    b: &[f32],
    b_strides: (isize, isize),
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides address only elements inside `a` (m×k) and `b`
    // (k×n) by construction at every call site, and `c` holds m×n values.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `x: [N,C,H,W]`, `kernel: [K,C,kh,kw]` → `[N,K,ho,wo]`.
pub fn conv2d(x: &[f32], kernel: &[f32], d: &ConvDims, geom: &ConvGeom) -> Vec<f32> {
    let xp = pad_input(x, d, geom);
    let (hp, wp) = (d.hp(geom), d.wp(geom));
    let plane = d.ho * d.wo;
    let ckk = d.c * d.kh * d.kw;
    let mut out = vec![0.0f32; d.n * d.k * plane];
    out.par_chunks_mut(d.k * plane).enumerate().for_each(|(n, dst)| {
        let mut col = vec![0.0f32; ckk * plane];
        im2col(&xp[n * d.c * hp * wp..(n + 1) * d.c * hp * wp], d, geom, &mut col);
        gemm(d.k, ckk, plane, kernel, (ckk as isize, 1), &col, (plane as isize, 1), dst, false);
    });
    out
}

/// Adjoint of [`conv2d`] in its input: `y: [N,K,ho,wo]` → `[N,C,H,W]`.
pub fn conv2d_transpose(y: &[f32], kernel: &[f32], d: &ConvDims, geom: &ConvGeom) -> Vec<f32> {
    let (ph, pw) = geom.pad;
    let (hp, wp) = (d.hp(geom), d.wp(geom));
    let plane = d.ho * d.wo;
    let ckk = d.c * d.kh * d.kw;
    let mut out = vec![0.0f32; d.n * d.c * d.h * d.w];
    out.par_chunks_mut(d.c * d.h * d.w).enumerate().for_each(|(n, dst)| {
        let mut col = vec![0.0f32; ckk * plane];
        let yn = &y[n * d.k * plane..(n + 1) * d.k * plane];
        // kernelᵀ (ckk × K) times y (K × plane)
        gemm(ckk, d.k, plane, kernel, (1, ckk as isize), yn, (plane as isize, 1), &mut col, false);
        let mut acc = vec![0.0f32; d.c * hp * wp];
        col2im(&col, d, geom, &mut acc);
        // Fold the padded accumulator back: drop pad rows, wrap pad columns.
        for c in 0..d.c {
            for r in 0..d.h {
                let arow = &acc[(c * hp + r + ph) * wp..(c * hp + r + ph + 1) * wp];
                let orow = &mut dst[(c * d.h + r) * d.w..(c * d.h + r + 1) * d.w];
                for (q, &v) in arow.iter().enumerate() {
                    orow[(q + d.w * pw - pw) % d.w] += v;
                }
            }
        }
    });
    out
}

/// Adjoint of [`conv2d`] in its kernel: `x: [N,C,H,W]`, `dy: [N,K,ho,wo]`
/// → `[K,C,kh,kw]`. Samples are accumulated in index order.
pub fn conv2d_kernel_grad(x: &[f32], dy: &[f32], d: &ConvDims, geom: &ConvGeom) -> Vec<f32> {
    let xp = pad_input(x, d, geom);
    let (hp, wp) = (d.hp(geom), d.wp(geom));
    let plane = d.ho * d.wo;
    let ckk = d.c * d.kh * d.kw;
    let mut out = vec![0.0f32; d.k * ckk];
    let mut col = vec![0.0f32; ckk * plane];
    for n in 0..d.n {
        im2col(&xp[n * d.c * hp * wp..(n + 1) * d.c * hp * wp], d, geom, &mut col);
        let gn = &dy[n * d.k * plane..(n + 1) * d.k * plane];
        // dy (K × plane) times colᵀ (plane × ckk)
        gemm(d.k, plane, ckk, gn, (plane as isize, 1), &col, (1, plane as isize), &mut out, n > 0);
    }
    out
}

/// Fixed 3-tap averaging blur of a single-channel `[N,1,H,W]` input into two
/// channels: vertical (channel 0) and horizontal (channel 1). The vertical
/// average covers only in-bounds rows, so constants are preserved at the top
/// and bottom edges; the horizontal average wraps around.
pub fn blur(x: &[f32], n: usize, h: usize, w: usize) -> Vec<f32> {
    let plane = h * w;
    let mut out = vec![0.0f32; n * 2 * plane];
    for b in 0..n {
        let src = &x[b * plane..(b + 1) * plane];
        let (vert, horiz) = out[b * 2 * plane..(b + 1) * 2 * plane].split_at_mut(plane);
        for i in 0..h {
            let (lo, hi) = (i.saturating_sub(1), (i + 1).min(h - 1));
            let inv = 1.0 / (hi - lo + 1) as f32;
            for j in 0..w {
                let mut s = 0.0f32;
                for r in lo..=hi {
                    s += src[r * w + j];
                }
                vert[i * w + j] = s * inv;
                let row = &src[i * w..(i + 1) * w];
                let s = row[(j + w - 1) % w] + row[j] + row[(j + 1) % w];
                horiz[i * w + j] = s * (1.0 / 3.0);
            }
        }
    }
    out
}

/// Adjoint of [`blur`]: `[N,2,H,W]` → `[N,1,H,W]`.
pub fn blur_transpose(g: &[f32], n: usize, h: usize, w: usize) -> Vec<f32> {
    let plane = h * w;
    let mut out = vec![0.0f32; n * plane];
    for b in 0..n {
        let (vert, horiz) = g[b * 2 * plane..(b + 1) * 2 * plane].split_at(plane);
        let dst = &mut out[b * plane..(b + 1) * plane];
        for i in 0..h {
            let (lo, hi) = (i.saturating_sub(1), (i + 1).min(h - 1));
            let inv = 1.0 / (hi - lo + 1) as f32;
            for j in 0..w {
                let gv = vert[i * w + j] * inv;
                for r in lo..=hi {
                    dst[r * w + j] += gv;
                }
                let gh = horiz[i * w + j] * (1.0 / 3.0);
                dst[i * w + (j + w - 1) % w] += gh;
                dst[i * w + j] += gh;
                dst[i * w + (j + 1) % w] += gh;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(n: usize, c: usize, k: usize, hw: (usize, usize), kk: (usize, usize), geom: &ConvGeom) -> ConvDims {
        let (ho, wo) = geom.conv_out(hw, kk).unwrap();
        ConvDims { n, c, k, h: hw.0, w: hw.1, kh: kk.0, kw: kk.1, ho, wo }
    }

    /// Direct definition with explicit index arithmetic, independent of the
    /// padded-buffer implementation.
    fn conv_reference(x: &[f32], k: &[f32], d: &ConvDims, g: &ConvGeom) -> Vec<f32> {
        let mut out = vec![0.0f32; d.n * d.k * d.ho * d.wo];
        for n in 0..d.n {
            for ko in 0..d.k {
                for oh in 0..d.ho {
                    for ow in 0..d.wo {
                        let mut s = 0.0f32;
                        for c in 0..d.c {
                            for dh in 0..d.kh {
                                let ih = (oh * g.stride.0 + dh) as isize - g.pad.0 as isize;
                                if ih < 0 || ih >= d.h as isize {
                                    continue;
                                }
                                for dw in 0..d.kw {
                                    let iw = (ow * g.stride.1 + dw + d.w - g.pad.1) % d.w;
                                    s += k[((ko * d.c + c) * d.kh + dh) * d.kw + dw]
                                        * x[((n * d.c + c) * d.h + ih as usize) * d.w + iw];
                                }
                            }
                        }
                        out[((n * d.k + ko) * d.ho + oh) * d.wo + ow] = s;
                    }
                }
            }
        }
        out
    }

    fn lcg(len: usize, seed: u32) -> Vec<f32> {
        let mut s = seed;
        (0..len)
            .map(|_| {
                s = s.wrapping_mul(1664525).wrapping_add(1013904223);
                (s >> 8) as f32 / (1u32 << 24) as f32 - 0.5
            })
            .collect()
    }

    #[test]
    fn conv_matches_reference_for_strided_geometry() {
        let geom = ConvGeom::new((2, 2), (1, 1));
        let d = dims(2, 3, 4, (8, 12), (4, 4), &geom);
        assert_eq!((d.ho, d.wo), (4, 6));
        let x = lcg(d.n * d.c * d.h * d.w, 1);
        let k = lcg(d.k * d.c * d.kh * d.kw, 2);
        let a = conv2d(&x, &k, &d, &geom);
        let b = conv_reference(&x, &k, &d, &geom);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-5);
        }
    }

    #[test]
    fn all_ones_three_by_three_gives_nine_in_untouched_rows() {
        let geom = ConvGeom::new((1, 1), (1, 1));
        let d = dims(1, 1, 1, (4, 8), (3, 3), &geom);
        let out = conv2d(&[1.0; 32], &[1.0; 9], &d, &geom);
        for r in 1..3 {
            for c in 0..8 {
                assert_eq!(out[r * 8 + c], 9.0, "row {r} col {c}");
            }
        }
        // Rows touching the vertical zero pad see only two kernel rows.
        assert_eq!(out[0], 6.0);
        assert_eq!(out[3 * 8 + 7], 6.0);
    }

    #[test]
    fn transpose_and_kernel_grad_are_adjoint() {
        let geom = ConvGeom::new((2, 2), (1, 1));
        let d = dims(2, 3, 2, (4, 8), (4, 4), &geom);
        let x = lcg(d.n * d.c * d.h * d.w, 3);
        let k = lcg(d.k * d.c * d.kh * d.kw, 4);
        let y = lcg(d.n * d.k * d.ho * d.wo, 5);
        let dot = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(&p, &q)| p as f64 * q as f64).sum::<f64>();
        let lhs = dot(&conv2d(&x, &k, &d, &geom), &y);
        let rhs_x = dot(&x, &conv2d_transpose(&y, &k, &d, &geom));
        let rhs_k = dot(&k, &conv2d_kernel_grad(&x, &y, &d, &geom));
        assert!((lhs - rhs_x).abs() < 1e-5 * lhs.abs().max(1.0));
        assert!((lhs - rhs_k).abs() < 1e-5 * lhs.abs().max(1.0));
    }

    #[test]
    fn blur_impulse_spreads_a_third_along_each_axis() {
        let (h, w) = (5, 7);
        let mut x = vec![0.0f32; h * w];
        x[2 * w + 3] = 1.0;
        let out = blur(&x, 1, h, w);
        let (vert, horiz) = out.split_at(h * w);
        for (i, j) in [(1, 3), (2, 3), (3, 3)] {
            assert!((vert[i * w + j] - 1.0 / 3.0).abs() < 1e-7);
        }
        for (i, j) in [(2, 2), (2, 3), (2, 4)] {
            assert!((horiz[i * w + j] - 1.0 / 3.0).abs() < 1e-7);
        }
        assert!((vert.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!((horiz.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn blur_horizontal_channel_wraps_the_seam() {
        let (h, w) = (3, 6);
        let mut x = vec![0.0f32; h * w];
        x[w] = 3.0; // row 1, column 0
        let out = blur(&x, 1, h, w);
        let horiz = &out[h * w..];
        assert_eq!(horiz[w + w - 1], 1.0);
        assert_eq!(horiz[w + 1], 1.0);
    }
}

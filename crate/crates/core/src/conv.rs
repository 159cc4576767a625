//! Raw convolution and RoI pooling kernels (forward + backward).
//!
//! Convolution is cross-correlation over NCHW input with OIHW kernels,
//! realized as im2col followed by a matrix product.

use crate::linalg;

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Fill `col` (c*kh*kw rows, oh*ow cols) from one image (c,h,w).
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [f64],
) {
    debug_assert_eq!(col.len(), c * kh * kw * oh * ow);
    let ohw = oh * ow;
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut col[((ci * kh + ky) * kw + kx) * ohw..][..ohw];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        row[oy * ow..(oy + 1) * ow].fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        row[oy * ow + ox] = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add the column matrix back into an image; inverse of `im2col`.
#[allow(clippy::too_many_arguments)]
pub fn col2im_acc(
    col: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), c * h * w);
    let ohw = oh * ow;
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &col[((ci * kh + ky) * kw + kx) * ohw..][..ohw];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        plane[iy as usize * w + ix as usize] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// Forward conv for a batch: input (n,c,h,w), kernel (o,c,kh,kw),
/// optional bias (o). Output (n,o,oh,ow).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    input: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    o: usize,
    kh: usize,
    kw: usize,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let ckk = c * kh * kw;
    let ohw = oh * ow;
    let mut out = vec![0.0; n * o * ohw];
    let mut col = vec![0.0; ckk * ohw];
    for b in 0..n {
        im2col(&input[b * c * h * w..], c, h, w, kh, kw, stride, pad, oh, ow, &mut col);
        linalg::matmul_acc(kernel, &col, &mut out[b * o * ohw..(b + 1) * o * ohw], o, ckk, ohw);
        if let Some(bias) = bias {
            for (oc, &bv) in bias.iter().enumerate() {
                for v in &mut out[b * o * ohw + oc * ohw..b * o * ohw + (oc + 1) * ohw] {
                    *v += bv;
                }
            }
        }
    }
    out
}

/// Backward conv: accumulates gradients w.r.t. input, kernel and bias.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    grad_out: &[f64],
    input: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    grad_input: &mut [f64],
    grad_kernel: &mut [f64],
    mut grad_bias: Option<&mut [f64]>,
) {
    let ckk = c * kh * kw;
    let ohw = oh * ow;
    let kernel_t = linalg::transpose(kernel, o, ckk);
    let mut col = vec![0.0; ckk * ohw];
    let mut dcol = vec![0.0; ckk * ohw];
    for b in 0..n {
        let go = &grad_out[b * o * ohw..(b + 1) * o * ohw];
        // dK += dOut * col^T
        im2col(&input[b * c * h * w..], c, h, w, kh, kw, stride, pad, oh, ow, &mut col);
        let col_t = linalg::transpose(&col, ckk, ohw);
        linalg::matmul_acc(go, &col_t, grad_kernel, o, ohw, ckk);
        // dIn += col2im(K^T * dOut)
        dcol.fill(0.0);
        linalg::matmul_acc(&kernel_t, go, &mut dcol, ckk, o, ohw);
        col2im_acc(
            &dcol,
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
            &mut grad_input[b * c * h * w..(b + 1) * c * h * w],
        );
        if let Some(gb) = grad_bias.as_deref_mut() {
            for oc in 0..o {
                gb[oc] += go[oc * ohw..(oc + 1) * ohw].iter().sum::<f64>();
            }
        }
    }
}

/// Axis-aligned box in continuous feature-map coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

/// Bilinear value of one feature plane at a continuous point; coordinates
/// clamped to the grid so border samples stay defined.
fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let v00 = plane[y0 * w + x0];
    let v01 = plane[y0 * w + x1];
    let v10 = plane[y1 * w + x0];
    let v11 = plane[y1 * w + x1];
    v00 * (1.0 - fy) * (1.0 - fx) + v01 * (1.0 - fy) * fx + v10 * fy * (1.0 - fx) + v11 * fy * fx
}

fn bilinear_scatter(plane: &mut [f64], h: usize, w: usize, y: f64, x: f64, g: f64) {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    plane[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
    plane[y0 * w + x1] += g * (1.0 - fy) * fx;
    plane[y1 * w + x0] += g * fy * (1.0 - fx);
    plane[y1 * w + x1] += g * fy * fx;
}

/// Sample offsets of the fixed 2x2 grid inside each output bin
/// (4 samples per bin, averaged).
const BIN_SAMPLES: [(f64, f64); 4] = [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)];

/// RoI-Align over features (c,h,w): bilinear sampling, no quantization.
/// Output (rois, c, out_h, out_w).
pub fn roi_align_forward(
    features: &[f64],
    c: usize,
    h: usize,
    w: usize,
    rois: &[RoiRect],
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; rois.len() * c * out_h * out_w];
    for (ri, roi) in rois.iter().enumerate() {
        let bh = (roi.y1 - roi.y0) / out_h as f64;
        let bw = (roi.x1 - roi.x0) / out_w as f64;
        for ci in 0..c {
            let plane = &features[ci * h * w..(ci + 1) * h * w];
            let dst = &mut out[((ri * c + ci) * out_h * out_w)..][..out_h * out_w];
            for by in 0..out_h {
                for bx in 0..out_w {
                    let mut acc = 0.0;
                    for &(sy, sx) in &BIN_SAMPLES {
                        let y = roi.y0 + (by as f64 + sy) * bh;
                        let x = roi.x0 + (bx as f64 + sx) * bw;
                        acc += bilinear(plane, h, w, y, x);
                    }
                    dst[by * out_w + bx] = acc / BIN_SAMPLES.len() as f64;
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn roi_align_backward(
    grad_out: &[f64],
    c: usize,
    h: usize,
    w: usize,
    rois: &[RoiRect],
    out_h: usize,
    out_w: usize,
    grad_features: &mut [f64],
) {
    let inv = 1.0 / BIN_SAMPLES.len() as f64;
    for (ri, roi) in rois.iter().enumerate() {
        let bh = (roi.y1 - roi.y0) / out_h as f64;
        let bw = (roi.x1 - roi.x0) / out_w as f64;
        for ci in 0..c {
            let plane = &mut grad_features[ci * h * w..(ci + 1) * h * w];
            let src = &grad_out[((ri * c + ci) * out_h * out_w)..][..out_h * out_w];
            for by in 0..out_h {
                for bx in 0..out_w {
                    let g = src[by * out_w + bx] * inv;
                    for &(sy, sx) in &BIN_SAMPLES {
                        let y = roi.y0 + (by as f64 + sy) * bh;
                        let x = roi.x0 + (bx as f64 + sx) * bw;
                        bilinear_scatter(plane, h, w, y, x, g);
                    }
                }
            }
        }
    }
}

//! 2D convolution and transposed convolution, lowered to GEMM via
//! im2col/col2im. Batch samples are processed in a fixed order so outputs
//! and weight-gradient accumulation are bit-reproducible.

use crate::error::{Error, Result};
use crate::tensor::tape::GradStore;
use crate::tensor::{Shape, Tape, Tensor};

use super::record::Record;

/// Row-major C = alpha * A(m,k) * B(k,n) + beta * C. `a_t`/`b_t` reinterpret
/// the operand as the transpose of its storage.
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Gather `src` (one sample, `c` channels of `src_h x src_w`) into the
/// column matrix `col[(c*kh*kw) x (grid_h*grid_w)]`, where grid point
/// `(gi, gj)` reads `src[ch, gi*stride + u - pad, gj*stride + v - pad]`
/// (zero outside).
fn im2col(
    src: &[f32],
    c: usize,
    src_h: usize,
    src_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    grid_h: usize,
    grid_w: usize,
    col: &mut [f32],
) {
    let n = grid_h * grid_w;
    debug_assert_eq!(col.len(), c * kh * kw * n);
    let mut row = 0;
    for ch in 0..c {
        let plane = &src[ch * src_h * src_w..(ch + 1) * src_h * src_w];
        for u in 0..kh {
            for v in 0..kw {
                let dst_row = &mut col[row * n..(row + 1) * n];
                for gi in 0..grid_h {
                    let iy = (gi * stride + u) as isize - pad as isize;
                    let out_base = gi * grid_w;
                    if iy < 0 || iy >= src_h as isize {
                        dst_row[out_base..out_base + grid_w].fill(0.0);
                        continue;
                    }
                    let src_base = iy as usize * src_w;
                    for gj in 0..grid_w {
                        let ix = (gj * stride + v) as isize - pad as isize;
                        dst_row[out_base + gj] = if ix >= 0 && ix < src_w as isize {
                            plane[src_base + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add transpose of [`im2col`]: `dst[ch, gi*stride + u - pad, ...]
/// += col[(ch,u,v), (gi,gj)]`.
fn col2im(
    col: &[f32],
    c: usize,
    dst_h: usize,
    dst_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    grid_h: usize,
    grid_w: usize,
    dst: &mut [f32],
) {
    let n = grid_h * grid_w;
    debug_assert_eq!(col.len(), c * kh * kw * n);
    debug_assert_eq!(dst.len(), c * dst_h * dst_w);
    let mut row = 0;
    for ch in 0..c {
        let plane = &mut dst[ch * dst_h * dst_w..(ch + 1) * dst_h * dst_w];
        for u in 0..kh {
            for v in 0..kw {
                let src_row = &col[row * n..(row + 1) * n];
                for gi in 0..grid_h {
                    let iy = (gi * stride + u) as isize - pad as isize;
                    if iy < 0 || iy >= dst_h as isize {
                        continue;
                    }
                    let dst_base = iy as usize * dst_w;
                    for gj in 0..grid_w {
                        let ix = (gj * stride + v) as isize - pad as isize;
                        if ix >= 0 && ix < dst_w as isize {
                            plane[dst_base + ix as usize] += src_row[gi * grid_w + gj];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn check_bias(bias: Option<&Tensor>, out_c: usize) -> Result<()> {
    if let Some(b) = bias {
        let s = b.shape();
        if s.b != 1 || s.c != out_c || s.h != 1 || s.w != 1 {
            return Err(Error::config(format!(
                "bias shape {} must be (1,{},1,1)",
                s, out_c
            )));
        }
    }
    Ok(())
}

pub fn conv2d_out_dims(h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> (usize, usize) {
    ((h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1)
}

/// 2D convolution with zero padding.
///
/// `x` is `(B, Cin, H, W)`, `w` is `(Cout, Cin, kh, kw)` with odd kernel
/// dims, optional `bias` is `(1, Cout, 1, 1)`.
pub fn conv2d(
    tape: &mut Tape,
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let xs = x.shape();
    let ws = w.shape();
    let (out_c, in_c, kh, kw) = (ws.b, ws.c, ws.h, ws.w);
    if in_c != xs.c {
        return Err(Error::config(format!(
            "conv2d input has {} channels but weight {} expects {}",
            xs.c, ws, in_c
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::config(format!("conv2d kernel dims must be odd, got {}x{}", kh, kw)));
    }
    if stride < 1 {
        return Err(Error::config("conv2d stride must be >= 1"));
    }
    if xs.h + 2 * pad < kh || xs.w + 2 * pad < kw {
        return Err(Error::config(format!(
            "conv2d input {} too small for kernel {}x{} with pad {}",
            xs, kh, kw, pad
        )));
    }
    check_bias(bias, out_c)?;

    let (oh, ow) = conv2d_out_dims(xs.h, xs.w, kh, kw, stride, pad);
    let n = oh * ow;
    let k_rows = in_c * kh * kw;
    let out_shape = Shape::new(xs.b, out_c, oh, ow);
    let mut out = vec![0.0f32; out_shape.numel()];
    let mut col = vec![0.0f32; k_rows * n];
    let sample = xs.sample_len();
    for b in 0..xs.b {
        im2col(&x.data()[b * sample..(b + 1) * sample], in_c, xs.h, xs.w, kh, kw, stride, pad, oh, ow, &mut col);
        let dst = &mut out[b * out_c * n..(b + 1) * out_c * n];
        gemm(out_c, k_rows, n, 1.0, w.data(), false, &col, false, 0.0, dst);
        if let Some(bt) = bias {
            for (c, &bv) in bt.data().iter().enumerate() {
                for v in &mut dst[c * n..(c + 1) * n] {
                    *v += bv;
                }
            }
        }
    }

    let req = tape.is_recording()
        && (x.requires_grad() || w.requires_grad() || bias.map_or(false, |b| b.requires_grad()));
    let out = Tensor::new(out_shape, out, req)?;
    if req {
        tape.push(Record::Conv2d {
            x: x.clone(),
            w: w.clone(),
            bias: bias.cloned(),
            stride,
            pad,
            out_id: out.id(),
        });
    }
    Ok(out)
}

pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
    dy: &[f32],
    acc: &mut GradStore,
) {
    let xs = x.shape();
    let ws = w.shape();
    let (out_c, in_c, kh, kw) = (ws.b, ws.c, ws.h, ws.w);
    let (oh, ow) = conv2d_out_dims(xs.h, xs.w, kh, kw, stride, pad);
    let n = oh * ow;
    let k_rows = in_c * kh * kw;
    let sample = xs.sample_len();

    let mut col = vec![0.0f32; k_rows * n];
    let mut dw = if w.requires_grad() { Some(vec![0.0f32; ws.numel()]) } else { None };
    let mut dx = if x.requires_grad() { Some(vec![0.0f32; xs.numel()]) } else { None };
    let mut dcol = if x.requires_grad() { vec![0.0f32; k_rows * n] } else { Vec::new() };

    for b in 0..xs.b {
        let dy_b = &dy[b * out_c * n..(b + 1) * out_c * n];
        if let Some(dw) = dw.as_mut() {
            im2col(&x.data()[b * sample..(b + 1) * sample], in_c, xs.h, xs.w, kh, kw, stride, pad, oh, ow, &mut col);
            // dW += dY_b * col^T
            gemm(out_c, n, k_rows, 1.0, dy_b, false, &col, true, 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            // dcol = W^T * dY_b, then scatter back onto the input grid.
            gemm(k_rows, out_c, n, 1.0, w.data(), true, dy_b, false, 0.0, &mut dcol);
            col2im(&dcol, in_c, xs.h, xs.w, kh, kw, stride, pad, oh, ow, &mut dx[b * sample..(b + 1) * sample]);
        }
    }
    if let Some(dw) = dw {
        acc.accumulate_owned(w.id(), dw);
    }
    if let Some(dx) = dx {
        acc.accumulate_owned(x.id(), dx);
    }
    if let Some(bt) = bias {
        if bt.requires_grad() {
            let mut db = vec![0.0f32; out_c];
            for b in 0..xs.b {
                for c in 0..out_c {
                    let base = (b * out_c + c) * n;
                    let mut s = 0.0f32;
                    for &v in &dy[base..base + n] {
                        s += v;
                    }
                    db[c] += s;
                }
            }
            acc.accumulate_owned(bt.id(), db);
        }
    }
}

pub fn conv_transpose2d_out_dims(h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> (usize, usize) {
    ((h - 1) * stride + kh - 2 * pad, (w - 1) * stride + kw - 2 * pad)
}

/// Transposed 2D convolution. `x` is `(B, Cin, H, W)`, `w` is
/// `(Cin, Cout, kh, kw)`, optional `bias` is `(1, Cout, 1, 1)`.
pub fn conv_transpose2d(
    tape: &mut Tape,
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let xs = x.shape();
    let ws = w.shape();
    let (in_c, out_c, kh, kw) = (ws.b, ws.c, ws.h, ws.w);
    if in_c != xs.c {
        return Err(Error::config(format!(
            "conv_transpose2d input has {} channels but weight {} expects {}",
            xs.c, ws, in_c
        )));
    }
    if stride < 1 {
        return Err(Error::config("conv_transpose2d stride must be >= 1"));
    }
    if (xs.h - 1) * stride + kh < 2 * pad + 1 || (xs.w - 1) * stride + kw < 2 * pad + 1 {
        return Err(Error::config("conv_transpose2d output would be empty"));
    }
    check_bias(bias, out_c)?;

    let (oh, ow) = conv_transpose2d_out_dims(xs.h, xs.w, kh, kw, stride, pad);
    let n_grid = xs.h * xs.w;
    let k_rows = out_c * kh * kw;
    let out_shape = Shape::new(xs.b, out_c, oh, ow);
    let mut out = vec![0.0f32; out_shape.numel()];
    let mut col = vec![0.0f32; k_rows * n_grid];
    let sample = xs.sample_len();
    let out_sample = out_shape.sample_len();
    for b in 0..xs.b {
        // col = W^T(Cout*k^2, Cin) * x_b, scattered onto the output grid.
        gemm(
            k_rows,
            in_c,
            n_grid,
            1.0,
            w.data(),
            true,
            &x.data()[b * sample..(b + 1) * sample],
            false,
            0.0,
            &mut col,
        );
        let dst = &mut out[b * out_sample..(b + 1) * out_sample];
        col2im(&col, out_c, oh, ow, kh, kw, stride, pad, xs.h, xs.w, dst);
        if let Some(bt) = bias {
            for (c, &bv) in bt.data().iter().enumerate() {
                for v in &mut dst[c * oh * ow..(c + 1) * oh * ow] {
                    *v += bv;
                }
            }
        }
    }

    let req = tape.is_recording()
        && (x.requires_grad() || w.requires_grad() || bias.map_or(false, |b| b.requires_grad()));
    let out = Tensor::new(out_shape, out, req)?;
    if req {
        tape.push(Record::ConvT2d {
            x: x.clone(),
            w: w.clone(),
            bias: bias.cloned(),
            stride,
            pad,
            out_id: out.id(),
        });
    }
    Ok(out)
}

pub(crate) fn conv_transpose2d_backward(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
    dy: &[f32],
    acc: &mut GradStore,
) {
    let xs = x.shape();
    let ws = w.shape();
    let (in_c, out_c, kh, kw) = (ws.b, ws.c, ws.h, ws.w);
    let (oh, ow) = conv_transpose2d_out_dims(xs.h, xs.w, kh, kw, stride, pad);
    let n_grid = xs.h * xs.w;
    let k_rows = out_c * kh * kw;
    let sample = xs.sample_len();
    let out_sample = out_c * oh * ow;

    let mut col = vec![0.0f32; k_rows * n_grid];
    let mut dw = if w.requires_grad() { Some(vec![0.0f32; ws.numel()]) } else { None };
    let mut dx = if x.requires_grad() { Some(vec![0.0f32; xs.numel()]) } else { None };

    for b in 0..xs.b {
        let dy_b = &dy[b * out_sample..(b + 1) * out_sample];
        // Gathering dY on the input grid inverts the forward scatter.
        im2col(dy_b, out_c, oh, ow, kh, kw, stride, pad, xs.h, xs.w, &mut col);
        if let Some(dx) = dx.as_mut() {
            gemm(
                in_c,
                k_rows,
                n_grid,
                1.0,
                w.data(),
                false,
                &col,
                false,
                0.0,
                &mut dx[b * sample..(b + 1) * sample],
            );
        }
        if let Some(dw) = dw.as_mut() {
            // dW(Cin, Cout*k^2) += x_b * col^T
            gemm(
                in_c,
                n_grid,
                k_rows,
                1.0,
                &x.data()[b * sample..(b + 1) * sample],
                false,
                &col,
                true,
                1.0,
                dw,
            );
        }
    }
    if let Some(dw) = dw {
        acc.accumulate_owned(w.id(), dw);
    }
    if let Some(dx) = dx {
        acc.accumulate_owned(x.id(), dx);
    }
    if let Some(bt) = bias {
        if bt.requires_grad() {
            let mut db = vec![0.0f32; out_c];
            let plane = oh * ow;
            for b in 0..xs.b {
                for c in 0..out_c {
                    let base = b * out_sample + c * plane;
                    let mut s = 0.0f32;
                    for &v in &dy[base..base + plane] {
                        s += v;
                    }
                    db[c] += s;
                }
            }
            acc.accumulate_owned(bt.id(), db);
        }
    }
}

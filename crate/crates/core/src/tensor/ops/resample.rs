//! Resampling primitives: bilinear resize, backward-warp grid sampling,
//! and 2x average pooling.
//!
//! Bilinear interpolation uses the `a + t*(b-a)` form so constant fields
//! and integer sample positions reproduce their inputs bit-exactly.

use crate::error::{Error, Result};
use crate::tensor::tape::GradStore;
use crate::tensor::{Shape, Tape, Tensor};

use super::record::Record;

#[inline]
fn lerp(a: f32, t: f32, b: f32) -> f32 {
    a + t * (b - a)
}

/// Source coordinate and tap data for one output position under the
/// align-corners-false convention, with taps clamped to the valid range.
#[inline]
fn resize_taps(o: usize, out_len: usize, in_len: usize) -> (usize, usize, f32) {
    let src = (o as f32 + 0.5) * (in_len as f32 / out_len as f32) - 0.5;
    let floor = src.floor();
    let frac = src - floor;
    let i0 = (floor as isize).clamp(0, in_len as isize - 1) as usize;
    let i1 = ((floor as isize + 1).clamp(0, in_len as isize - 1)) as usize;
    (i0, i1, frac)
}

/// Bilinear resize to `(out_h, out_w)`; every output value is multiplied
/// by `scale_values` (1.0 for images, the spatial ratio for flow fields).
pub fn resize_bilinear(
    tape: &mut Tape,
    x: &Tensor,
    out_h: usize,
    out_w: usize,
    scale_values: f32,
) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::config("resize_bilinear output dims must be >= 1"));
    }
    let xs = x.shape();
    let out_shape = Shape::new(xs.b, xs.c, out_h, out_w);
    if out_h == xs.h && out_w == xs.w && scale_values == 1.0 {
        // Identity resize: keep sampling path out of the picture entirely.
        let out = Tensor::new(out_shape, x.to_vec(), tape.is_recording() && x.requires_grad())?;
        if out.requires_grad() {
            tape.push(Record::Resize {
                x: x.clone(),
                out_h,
                out_w,
                scale_values,
                out_id: out.id(),
            });
        }
        return Ok(out);
    }

    let mut ys = Vec::with_capacity(out_h);
    for oi in 0..out_h {
        ys.push(resize_taps(oi, out_h, xs.h));
    }
    let mut xtaps = Vec::with_capacity(out_w);
    for oj in 0..out_w {
        xtaps.push(resize_taps(oj, out_w, xs.w));
    }

    let mut out = vec![0.0f32; out_shape.numel()];
    let src = x.data();
    for b in 0..xs.b {
        for c in 0..xs.c {
            let plane = &src[(b * xs.c + c) * xs.plane_len()..][..xs.plane_len()];
            let dst = &mut out[(b * xs.c + c) * out_h * out_w..][..out_h * out_w];
            for (oi, &(y0, y1, fy)) in ys.iter().enumerate() {
                let r0 = &plane[y0 * xs.w..y0 * xs.w + xs.w];
                let r1 = &plane[y1 * xs.w..y1 * xs.w + xs.w];
                let dst_row = &mut dst[oi * out_w..(oi + 1) * out_w];
                for (oj, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                    let top = lerp(r0[x0], fx, r0[x1]);
                    let bot = lerp(r1[x0], fx, r1[x1]);
                    dst_row[oj] = lerp(top, fy, bot) * scale_values;
                }
            }
        }
    }

    let req = tape.is_recording() && x.requires_grad();
    let out = Tensor::new(out_shape, out, req)?;
    if req {
        tape.push(Record::Resize { x: x.clone(), out_h, out_w, scale_values, out_id: out.id() });
    }
    Ok(out)
}

pub(crate) fn resize_backward(
    x: &Tensor,
    out_h: usize,
    out_w: usize,
    scale_values: f32,
    dy: &[f32],
    acc: &mut GradStore,
) {
    if !x.requires_grad() {
        return;
    }
    let xs = x.shape();
    if out_h == xs.h && out_w == xs.w && scale_values == 1.0 {
        acc.accumulate(x.id(), dy);
        return;
    }
    let mut ys = Vec::with_capacity(out_h);
    for oi in 0..out_h {
        ys.push(resize_taps(oi, out_h, xs.h));
    }
    let mut xtaps = Vec::with_capacity(out_w);
    for oj in 0..out_w {
        xtaps.push(resize_taps(oj, out_w, xs.w));
    }
    let mut dx = vec![0.0f32; xs.numel()];
    for b in 0..xs.b {
        for c in 0..xs.c {
            let dplane = &mut dx[(b * xs.c + c) * xs.plane_len()..][..xs.plane_len()];
            let dsrc = &dy[(b * xs.c + c) * out_h * out_w..][..out_h * out_w];
            for (oi, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (oj, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                    let g = dsrc[oi * out_w + oj] * scale_values;
                    dplane[y0 * xs.w + x0] += g * (1.0 - fy) * (1.0 - fx);
                    dplane[y0 * xs.w + x1] += g * (1.0 - fy) * fx;
                    dplane[y1 * xs.w + x0] += g * fy * (1.0 - fx);
                    dplane[y1 * xs.w + x1] += g * fy * fx;
                }
            }
        }
    }
    acc.accumulate_owned(x.id(), dx);
}

/// Backward warp: `out(b,c,i,j)` bilinearly samples `image` at
/// `(j + flow_x(i,j), i + flow_y(i,j))`, with out-of-bounds coordinates
/// clamped to the border. Differentiable in both the image and the flow.
pub fn grid_sample(tape: &mut Tape, image: &Tensor, flow: &Tensor) -> Result<Tensor> {
    let is = image.shape();
    let fs = flow.shape();
    if fs.c != 2 {
        return Err(Error::config(format!(
            "grid_sample flow must have 2 channels (x,y displacement), got {}",
            fs.c
        )));
    }
    if fs.b != is.b || fs.h != is.h || fs.w != is.w {
        return Err(Error::config(format!(
            "grid_sample image {} and flow {} must share batch and spatial dims",
            is, fs
        )));
    }

    let (h, w) = (is.h, is.w);
    let plane = is.plane_len();
    let mut out = vec![0.0f32; is.numel()];
    let img = image.data();
    let fl = flow.data();
    for b in 0..is.b {
        let fx = &fl[(b * 2) * plane..][..plane];
        let fy = &fl[(b * 2 + 1) * plane..][..plane];
        for i in 0..h {
            for j in 0..w {
                let p = i * w + j;
                let sx = (j as f32 + fx[p]).clamp(0.0, (w - 1) as f32);
                let sy = (i as f32 + fy[p]).clamp(0.0, (h - 1) as f32);
                let x0 = sx.floor() as usize;
                let y0 = sy.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let y1 = (y0 + 1).min(h - 1);
                let dx = sx - x0 as f32;
                let dyf = sy - y0 as f32;
                for c in 0..is.c {
                    let src = &img[(b * is.c + c) * plane..][..plane];
                    let top = lerp(src[y0 * w + x0], dx, src[y0 * w + x1]);
                    let bot = lerp(src[y1 * w + x0], dx, src[y1 * w + x1]);
                    out[(b * is.c + c) * plane + p] = lerp(top, dyf, bot);
                }
            }
        }
    }

    let req = tape.is_recording() && (image.requires_grad() || flow.requires_grad());
    let out = Tensor::new(is, out, req)?;
    if req {
        tape.push(Record::GridSample { img: image.clone(), flow: flow.clone(), out_id: out.id() });
    }
    Ok(out)
}

pub(crate) fn grid_sample_backward(image: &Tensor, flow: &Tensor, dy: &[f32], acc: &mut GradStore) {
    let is = image.shape();
    let (h, w) = (is.h, is.w);
    let plane = is.plane_len();
    let img = image.data();
    let fl = flow.data();
    let want_img = image.requires_grad();
    let want_flow = flow.requires_grad();
    let mut dimg = if want_img { Some(vec![0.0f32; is.numel()]) } else { None };
    let mut dflow = if want_flow { Some(vec![0.0f32; flow.shape().numel()]) } else { None };

    for b in 0..is.b {
        let fx = &fl[(b * 2) * plane..][..plane];
        let fy = &fl[(b * 2 + 1) * plane..][..plane];
        for i in 0..h {
            for j in 0..w {
                let p = i * w + j;
                let rx = j as f32 + fx[p];
                let ry = i as f32 + fy[p];
                let sx = rx.clamp(0.0, (w - 1) as f32);
                let sy = ry.clamp(0.0, (h - 1) as f32);
                let x0 = sx.floor() as usize;
                let y0 = sy.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let y1 = (y0 + 1).min(h - 1);
                let dx = sx - x0 as f32;
                let dyf = sy - y0 as f32;
                let w00 = (1.0 - dyf) * (1.0 - dx);
                let w01 = (1.0 - dyf) * dx;
                let w10 = dyf * (1.0 - dx);
                let w11 = dyf * dx;
                let mut gx = 0.0f32;
                let mut gy = 0.0f32;
                for c in 0..is.c {
                    let base = (b * is.c + c) * plane;
                    let g = dy[base + p];
                    if g == 0.0 {
                        continue;
                    }
                    if let Some(di) = dimg.as_mut() {
                        di[base + y0 * w + x0] += g * w00;
                        di[base + y0 * w + x1] += g * w01;
                        di[base + y1 * w + x0] += g * w10;
                        di[base + y1 * w + x1] += g * w11;
                    }
                    if want_flow {
                        let src = &img[base..base + plane];
                        let v00 = src[y0 * w + x0];
                        let v01 = src[y0 * w + x1];
                        let v10 = src[y1 * w + x0];
                        let v11 = src[y1 * w + x1];
                        gx += g * ((1.0 - dyf) * (v01 - v00) + dyf * (v11 - v10));
                        gy += g * ((1.0 - dx) * (v10 - v00) + dx * (v11 - v01));
                    }
                }
                if let Some(df) = dflow.as_mut() {
                    // Saturated coordinates have zero derivative w.r.t. the flow.
                    if rx > 0.0 && rx < (w - 1) as f32 {
                        df[(b * 2) * plane + p] = gx;
                    }
                    if ry > 0.0 && ry < (h - 1) as f32 {
                        df[(b * 2 + 1) * plane + p] = gy;
                    }
                }
            }
        }
    }
    if let Some(di) = dimg {
        acc.accumulate_owned(image.id(), di);
    }
    if let Some(df) = dflow {
        acc.accumulate_owned(flow.id(), df);
    }
}

/// 2x spatial mean-downsample. Requires even spatial dims.
pub fn avg_pool2(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    if xs.h % 2 != 0 || xs.w % 2 != 0 {
        return Err(Error::config(format!("avg_pool2 needs even spatial dims, got {}", xs)));
    }
    let (oh, ow) = (xs.h / 2, xs.w / 2);
    let out_shape = Shape::new(xs.b, xs.c, oh, ow);
    let mut out = vec![0.0f32; out_shape.numel()];
    let src = x.data();
    for bc in 0..xs.b * xs.c {
        let plane = &src[bc * xs.plane_len()..][..xs.plane_len()];
        let dst = &mut out[bc * oh * ow..][..oh * ow];
        for i in 0..oh {
            let r0 = &plane[2 * i * xs.w..(2 * i + 1) * xs.w];
            let r1 = &plane[(2 * i + 1) * xs.w..(2 * i + 2) * xs.w];
            for j in 0..ow {
                dst[i * ow + j] = (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]) * 0.25;
            }
        }
    }
    let req = tape.is_recording() && x.requires_grad();
    let out = Tensor::new(out_shape, out, req)?;
    if req {
        tape.push(Record::AvgPool2 { x: x.clone(), out_id: out.id() });
    }
    Ok(out)
}

pub(crate) fn avg_pool2_backward(x: &Tensor, dy: &[f32], acc: &mut GradStore) {
    if !x.requires_grad() {
        return;
    }
    let xs = x.shape();
    let (oh, ow) = (xs.h / 2, xs.w / 2);
    let mut dx = vec![0.0f32; xs.numel()];
    for bc in 0..xs.b * xs.c {
        let dsrc = &dy[bc * oh * ow..][..oh * ow];
        let dplane = &mut dx[bc * xs.plane_len()..][..xs.plane_len()];
        for i in 0..oh {
            for j in 0..ow {
                let g = dsrc[i * ow + j] * 0.25;
                dplane[2 * i * xs.w + 2 * j] += g;
                dplane[2 * i * xs.w + 2 * j + 1] += g;
                dplane[(2 * i + 1) * xs.w + 2 * j] += g;
                dplane[(2 * i + 1) * xs.w + 2 * j + 1] += g;
            }
        }
    }
    acc.accumulate_owned(x.id(), dx);
}

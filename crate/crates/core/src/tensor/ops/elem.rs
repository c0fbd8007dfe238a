//! Elementwise and shape-manipulating primitives.

use crate::error::{Error, Result};
use crate::tensor::tape::GradStore;
use crate::tensor::{Shape, Tape, Tensor};

use super::record::Record;

fn unary(
    tape: &mut Tape,
    x: &Tensor,
    data: Vec<f32>,
    record: impl FnOnce(Tensor, &Tensor) -> Record,
) -> Result<Tensor> {
    let req = tape.is_recording() && x.requires_grad();
    let out = Tensor::new(x.shape(), data, req)?;
    if req {
        tape.push(record(x.clone(), &out));
    }
    Ok(out)
}

pub fn leaky_relu(tape: &mut Tape, x: &Tensor, slope: f32) -> Result<Tensor> {
    let data = x.data().iter().map(|&v| if v >= 0.0 { v } else { v * slope }).collect();
    unary(tape, x, data, |x, out| Record::LeakyRelu { x, slope, out_id: out.id() })
}

pub fn sigmoid(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    let data: Vec<f32> = x.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
    let req = tape.is_recording() && x.requires_grad();
    let out = Tensor::new(x.shape(), data, req)?;
    if req {
        tape.push(Record::Sigmoid { x: x.clone(), y: out.clone(), out_id: out.id() });
    }
    Ok(out)
}

/// `y = |x|`, subgradient 0 at the origin.
pub fn abs(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    let data = x.data().iter().map(|v| v.abs()).collect();
    unary(tape, x, data, |x, out| Record::Abs { x, out_id: out.id() })
}

/// `y = clamp(x, 0, 1)`; gradient passes inside the (inclusive) bounds.
pub fn clamp01(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    let data = x.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    unary(tape, x, data, |x, out| Record::Clamp01 { x, out_id: out.id() })
}

/// `y = scale * x + shift` with scalar coefficients.
pub fn affine(tape: &mut Tape, x: &Tensor, scale: f32, shift: f32) -> Result<Tensor> {
    let data = x.data().iter().map(|&v| scale * v + shift).collect();
    unary(tape, x, data, |x, out| Record::Affine { x, scale, out_id: out.id() })
}

pub fn scale(tape: &mut Tape, x: &Tensor, factor: f32) -> Result<Tensor> {
    affine(tape, x, factor, 0.0)
}

fn check_same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::config(format!(
            "{} operands must share shape, got {} vs {}",
            op,
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn binary(
    tape: &mut Tape,
    a: &Tensor,
    b: &Tensor,
    shape: Shape,
    data: Vec<f32>,
    record: impl FnOnce(Tensor, Tensor, &Tensor) -> Record,
) -> Result<Tensor> {
    let req = tape.is_recording() && (a.requires_grad() || b.requires_grad());
    let out = Tensor::new(shape, data, req)?;
    if req {
        tape.push(record(a.clone(), b.clone(), &out));
    }
    Ok(out)
}

pub fn add(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    binary(tape, a, b, a.shape(), data, |a, b, out| Record::Add { a, b, out_id: out.id() })
}

pub fn sub(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    binary(tape, a, b, a.shape(), data, |a, b, out| Record::Sub { a, b, out_id: out.id() })
}

/// Elementwise product. `b` may have a single channel, broadcast over all
/// channels of `a` (used for fusion-map blending).
pub fn mul(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (asp, bsp) = (a.shape(), b.shape());
    if asp == bsp {
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        return binary(tape, a, b, asp, data, |a, b, out| Record::Mul { a, b, out_id: out.id() });
    }
    if bsp.c == 1 && asp.b == bsp.b && asp.h == bsp.h && asp.w == bsp.w {
        let plane = asp.plane_len();
        let mut data = vec![0.0f32; asp.numel()];
        for bi in 0..asp.b {
            let m = &b.data()[bi * plane..(bi + 1) * plane];
            for c in 0..asp.c {
                let src = &a.data()[(bi * asp.c + c) * plane..][..plane];
                let dst = &mut data[(bi * asp.c + c) * plane..][..plane];
                for (d, (x, y)) in dst.iter_mut().zip(src.iter().zip(m)) {
                    *d = x * y;
                }
            }
        }
        return binary(tape, a, b, asp, data, |a, b, out| Record::MulBcast {
            a,
            b,
            out_id: out.id(),
        });
    }
    Err(Error::config(format!(
        "mul operands must share shape or broadcast a single channel, got {} vs {}",
        asp, bsp
    )))
}

pub(crate) fn mul_bcast_backward(a: &Tensor, b: &Tensor, dy: &[f32], acc: &mut GradStore) {
    let asp = a.shape();
    let plane = asp.plane_len();
    if a.requires_grad() {
        let mut da = vec![0.0f32; asp.numel()];
        for bi in 0..asp.b {
            let m = &b.data()[bi * plane..(bi + 1) * plane];
            for c in 0..asp.c {
                let base = (bi * asp.c + c) * plane;
                for p in 0..plane {
                    da[base + p] = dy[base + p] * m[p];
                }
            }
        }
        acc.accumulate_owned(a.id(), da);
    }
    if b.requires_grad() {
        let mut db = vec![0.0f32; b.shape().numel()];
        for bi in 0..asp.b {
            for c in 0..asp.c {
                let base = (bi * asp.c + c) * plane;
                let src = &a.data()[base..base + plane];
                let dst = &mut db[bi * plane..(bi + 1) * plane];
                for p in 0..plane {
                    dst[p] += dy[base + p] * src[p];
                }
            }
        }
        acc.accumulate_owned(b.id(), db);
    }
}

/// Concatenate along the channel axis; all inputs share `(B, H, W)`.
pub fn concat_channels(tape: &mut Tape, xs: &[&Tensor]) -> Result<Tensor> {
    if xs.is_empty() {
        return Err(Error::config("concat_channels needs at least one input"));
    }
    let first = xs[0].shape();
    let mut total_c = 0;
    for x in xs {
        let s = x.shape();
        if s.b != first.b || s.h != first.h || s.w != first.w {
            return Err(Error::config(format!(
                "concat_channels inputs must share (B,H,W): {} vs {}",
                first, s
            )));
        }
        total_c += s.c;
    }
    let out_shape = Shape::new(first.b, total_c, first.h, first.w);
    let plane = first.plane_len();
    let mut data = vec![0.0f32; out_shape.numel()];
    for b in 0..first.b {
        let mut c_off = 0;
        for x in xs {
            let xc = x.shape().c;
            let src = &x.data()[b * xc * plane..(b + 1) * xc * plane];
            let dst = &mut data[(b * total_c + c_off) * plane..][..xc * plane];
            dst.copy_from_slice(src);
            c_off += xc;
        }
    }
    let req = tape.is_recording() && xs.iter().any(|x| x.requires_grad());
    let out = Tensor::new(out_shape, data, req)?;
    if req {
        tape.push(Record::Concat { xs: xs.iter().map(|x| (*x).clone()).collect(), out_id: out.id() });
    }
    Ok(out)
}

pub(crate) fn concat_backward(xs: &[Tensor], dy: &[f32], acc: &mut GradStore) {
    let first = xs[0].shape();
    let plane = first.plane_len();
    let total_c: usize = xs.iter().map(|x| x.shape().c).sum();
    let mut c_off = 0;
    for x in xs {
        let xc = x.shape().c;
        if x.requires_grad() {
            let mut dx = vec![0.0f32; x.shape().numel()];
            for b in 0..first.b {
                let src = &dy[(b * total_c + c_off) * plane..][..xc * plane];
                dx[b * xc * plane..(b + 1) * xc * plane].copy_from_slice(src);
            }
            acc.accumulate_owned(x.id(), dx);
        }
        c_off += xc;
    }
}

/// Channel slice `[c0, c1)`.
pub fn slice_channels(tape: &mut Tape, x: &Tensor, c0: usize, c1: usize) -> Result<Tensor> {
    let xs = x.shape();
    if c0 >= c1 || c1 > xs.c {
        return Err(Error::config(format!(
            "slice_channels range {}..{} invalid for {} channels",
            c0, c1, xs.c
        )));
    }
    let plane = xs.plane_len();
    let nc = c1 - c0;
    let out_shape = Shape::new(xs.b, nc, xs.h, xs.w);
    let mut data = vec![0.0f32; out_shape.numel()];
    for b in 0..xs.b {
        let src = &x.data()[(b * xs.c + c0) * plane..][..nc * plane];
        data[b * nc * plane..(b + 1) * nc * plane].copy_from_slice(src);
    }
    let req = tape.is_recording() && x.requires_grad();
    let out = Tensor::new(out_shape, data, req)?;
    if req {
        tape.push(Record::SliceC { x: x.clone(), c0, c1, out_id: out.id() });
    }
    Ok(out)
}

pub(crate) fn slice_backward(x: &Tensor, c0: usize, c1: usize, dy: &[f32], acc: &mut GradStore) {
    if !x.requires_grad() {
        return;
    }
    let xs = x.shape();
    let plane = xs.plane_len();
    let nc = c1 - c0;
    let mut dx = vec![0.0f32; xs.numel()];
    for b in 0..xs.b {
        let dst = &mut dx[(b * xs.c + c0) * plane..][..nc * plane];
        dst.copy_from_slice(&dy[b * nc * plane..(b + 1) * nc * plane]);
    }
    acc.accumulate_owned(x.id(), dx);
}

/// Mean over every element, as a `(1,1,1,1)` tensor. Accumulates in f64
/// with a fixed order, so results are reproducible.
pub fn reduce_mean(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    let mut sum = 0.0f64;
    for &v in x.data() {
        sum += v as f64;
    }
    let mean = (sum / x.shape().numel() as f64) as f32;
    let req = tape.is_recording() && x.requires_grad();
    let out = Tensor::new(Shape::new(1, 1, 1, 1), vec![mean], req)?;
    if req {
        tape.push(Record::Mean { x: x.clone(), out_id: out.id() });
    }
    Ok(out)
}

/// Zero-pad on the bottom/right up to `(new_h, new_w)`.
pub fn pad_hw(tape: &mut Tape, x: &Tensor, new_h: usize, new_w: usize) -> Result<Tensor> {
    let xs = x.shape();
    if new_h < xs.h || new_w < xs.w {
        return Err(Error::config(format!(
            "pad_hw target ({},{}) smaller than input {}",
            new_h, new_w, xs
        )));
    }
    if new_h == xs.h && new_w == xs.w {
        return identity_like(tape, x, |x, out_id| Record::PadHw { x, out_h: new_h, out_w: new_w, out_id });
    }
    let out_shape = Shape::new(xs.b, xs.c, new_h, new_w);
    let mut data = vec![0.0f32; out_shape.numel()];
    for bc in 0..xs.b * xs.c {
        for i in 0..xs.h {
            let src = &x.data()[bc * xs.plane_len() + i * xs.w..][..xs.w];
            let dst = &mut data[bc * new_h * new_w + i * new_w..][..xs.w];
            dst.copy_from_slice(src);
        }
    }
    let req = tape.is_recording() && x.requires_grad();
    let out = Tensor::new(out_shape, data, req)?;
    if req {
        tape.push(Record::PadHw { x: x.clone(), out_h: new_h, out_w: new_w, out_id: out.id() });
    }
    Ok(out)
}

pub(crate) fn pad_backward(x: &Tensor, out_h: usize, _out_w: usize, dy: &[f32], acc: &mut GradStore) {
    if !x.requires_grad() {
        return;
    }
    let xs = x.shape();
    let out_w = dy.len() / (xs.b * xs.c * out_h);
    let mut dx = vec![0.0f32; xs.numel()];
    for bc in 0..xs.b * xs.c {
        for i in 0..xs.h {
            let src = &dy[bc * out_h * out_w + i * out_w..][..xs.w];
            dx[bc * xs.plane_len() + i * xs.w..][..xs.w].copy_from_slice(src);
        }
    }
    acc.accumulate_owned(x.id(), dx);
}

/// Top-left crop down to `(new_h, new_w)`.
pub fn crop_hw(tape: &mut Tape, x: &Tensor, new_h: usize, new_w: usize) -> Result<Tensor> {
    let xs = x.shape();
    if new_h > xs.h || new_w > xs.w {
        return Err(Error::config(format!(
            "crop_hw target ({},{}) larger than input {}",
            new_h, new_w, xs
        )));
    }
    if new_h == xs.h && new_w == xs.w {
        return identity_like(tape, x, |x, out_id| Record::CropHw { x, out_h: new_h, out_w: new_w, out_id });
    }
    let out_shape = Shape::new(xs.b, xs.c, new_h, new_w);
    let mut data = vec![0.0f32; out_shape.numel()];
    for bc in 0..xs.b * xs.c {
        for i in 0..new_h {
            let src = &x.data()[bc * xs.plane_len() + i * xs.w..][..new_w];
            data[bc * new_h * new_w + i * new_w..][..new_w].copy_from_slice(src);
        }
    }
    let req = tape.is_recording() && x.requires_grad();
    let out = Tensor::new(out_shape, data, req)?;
    if req {
        tape.push(Record::CropHw { x: x.clone(), out_h: new_h, out_w: new_w, out_id: out.id() });
    }
    Ok(out)
}

pub(crate) fn crop_backward(x: &Tensor, out_h: usize, out_w: usize, dy: &[f32], acc: &mut GradStore) {
    if !x.requires_grad() {
        return;
    }
    let xs = x.shape();
    let mut dx = vec![0.0f32; xs.numel()];
    for bc in 0..xs.b * xs.c {
        for i in 0..out_h {
            let src = &dy[bc * out_h * out_w + i * out_w..][..out_w];
            dx[bc * xs.plane_len() + i * xs.w..][..out_w].copy_from_slice(src);
        }
    }
    acc.accumulate_owned(x.id(), dx);
}

fn identity_like(
    tape: &mut Tape,
    x: &Tensor,
    record: impl FnOnce(Tensor, crate::tensor::TensorId) -> Record,
) -> Result<Tensor> {
    let req = tape.is_recording() && x.requires_grad();
    let out = Tensor::new(x.shape(), x.to_vec(), req)?;
    if req {
        tape.push(record(x.clone(), out.id()));
    }
    Ok(out)
}

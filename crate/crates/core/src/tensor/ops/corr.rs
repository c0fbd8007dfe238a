//! Single-scale neighbor correspondence matching.
//!
//! For every output pixel, channel-wise dot products are computed between
//! all pairs of window positions in the two feature maps, centered at the
//! pixel's (bilinearly interpolated) position in the scale-k map. Window
//! taps outside the feature map read zero. Dot products are scaled by
//! 1/sqrt(C) to keep magnitudes resolution-independent.

use crate::error::{Error, Result};
use crate::tensor::tape::GradStore;
use crate::tensor::{Shape, Tape, Tensor};

use super::record::Record;

/// Gather the channel vector at real-valued position `(y, x)` of one
/// sample, bilinear with zero outside the map. `out` is zeroed first.
fn sample_vec_zero(data: &[f32], c: usize, h: usize, w: usize, y: f32, x: f32, out: &mut [f32]) {
    debug_assert_eq!(out.len(), c);
    out.fill(0.0);
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let (y0, x0) = (y0 as isize, x0 as isize);
    let plane = h * w;
    let mut tap = |yy: isize, xx: isize, wt: f32| {
        if wt == 0.0 || yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
            return;
        }
        let off = yy as usize * w + xx as usize;
        for (ch, o) in out.iter_mut().enumerate() {
            *o += wt * data[ch * plane + off];
        }
    };
    tap(y0, x0, (1.0 - fy) * (1.0 - fx));
    tap(y0, x0 + 1, (1.0 - fy) * fx);
    tap(y0 + 1, x0, fy * (1.0 - fx));
    tap(y0 + 1, x0 + 1, fy * fx);
}

/// Scatter `dv` through the same bilinear taps (transpose of
/// [`sample_vec_zero`]).
fn scatter_vec_zero(dst: &mut [f32], c: usize, h: usize, w: usize, y: f32, x: f32, dv: &[f32]) {
    debug_assert_eq!(dv.len(), c);
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let (y0, x0) = (y0 as isize, x0 as isize);
    let plane = h * w;
    let mut tap = |yy: isize, xx: isize, wt: f32| {
        if wt == 0.0 || yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
            return;
        }
        let off = yy as usize * w + xx as usize;
        for (ch, &g) in dv.iter().enumerate() {
            dst[ch * plane + off] += wt * g;
        }
    };
    tap(y0, x0, (1.0 - fy) * (1.0 - fx));
    tap(y0, x0 + 1, (1.0 - fy) * fx);
    tap(y0 + 1, x0, fy * (1.0 - fx));
    tap(y0 + 1, x0 + 1, fy * fx);
}

fn check_inputs(f0: &Tensor, f1: &Tensor, window: usize) -> Result<()> {
    if window % 2 == 0 {
        return Err(Error::config(format!("match window size d must be odd, got {}", window)));
    }
    if f0.shape() != f1.shape() {
        return Err(Error::config(format!(
            "match features must share shape, got {} vs {}",
            f0.shape(),
            f1.shape()
        )));
    }
    Ok(())
}

/// Correspondences of all window-offset pairs at scale index `k`.
///
/// `f0`/`f1` are the deepest pyramid features pooled `k` times; the output
/// grid is `(out_h, out_w)` (the scale-0 resolution), and positions map to
/// the pooled map as `(i, j) / 2^k` with bilinear interpolation.
/// Output channel layout nests the offsets as `(di0, dj0, di1, dj1)`.
pub fn match_scale(
    tape: &mut Tape,
    f0: &Tensor,
    f1: &Tensor,
    window: usize,
    scale_idx: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor> {
    check_inputs(f0, f1, window)?;
    let s = f0.shape();
    let d2 = window * window;
    let d4 = d2 * d2;
    let out_shape = Shape::new(s.b, d4, out_h, out_w);
    let inv_scale = 1.0 / (1usize << scale_idx) as f32;
    let inv_sqrt_c = 1.0 / (s.c as f32).sqrt();
    let r = (window / 2) as isize;

    let mut out = vec![0.0f32; out_shape.numel()];
    let mut v0 = vec![0.0f32; d2 * s.c];
    let mut v1 = vec![0.0f32; d2 * s.c];
    let sample_len = s.sample_len();
    let out_plane = out_h * out_w;

    for b in 0..s.b {
        let d0 = &f0.data()[b * sample_len..(b + 1) * sample_len];
        let d1 = &f1.data()[b * sample_len..(b + 1) * sample_len];
        for oi in 0..out_h {
            for oj in 0..out_w {
                let yk = oi as f32 * inv_scale;
                let xk = oj as f32 * inv_scale;
                let mut widx = 0;
                for di in -r..=r {
                    for dj in -r..=r {
                        let y = yk + di as f32;
                        let x = xk + dj as f32;
                        sample_vec_zero(d0, s.c, s.h, s.w, y, x, &mut v0[widx * s.c..(widx + 1) * s.c]);
                        sample_vec_zero(d1, s.c, s.h, s.w, y, x, &mut v1[widx * s.c..(widx + 1) * s.c]);
                        widx += 1;
                    }
                }
                let px = oi * out_w + oj;
                for w0 in 0..d2 {
                    let a = &v0[w0 * s.c..(w0 + 1) * s.c];
                    for w1 in 0..d2 {
                        let bvec = &v1[w1 * s.c..(w1 + 1) * s.c];
                        let mut dot = 0.0f32;
                        for ch in 0..s.c {
                            dot += a[ch] * bvec[ch];
                        }
                        out[(b * d4 + w0 * d2 + w1) * out_plane + px] = dot * inv_sqrt_c;
                    }
                }
            }
        }
    }

    let req = tape.is_recording() && (f0.requires_grad() || f1.requires_grad());
    let out = Tensor::new(out_shape, out, req)?;
    if req {
        tape.push(Record::MatchScale {
            f0: f0.clone(),
            f1: f1.clone(),
            window,
            scale_idx,
            out_h,
            out_w,
            out_id: out.id(),
        });
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn match_scale_backward(
    f0: &Tensor,
    f1: &Tensor,
    window: usize,
    scale_idx: usize,
    out_h: usize,
    out_w: usize,
    dy: &[f32],
    acc: &mut GradStore,
) {
    let s = f0.shape();
    let d2 = window * window;
    let d4 = d2 * d2;
    let inv_scale = 1.0 / (1usize << scale_idx) as f32;
    let inv_sqrt_c = 1.0 / (s.c as f32).sqrt();
    let r = (window / 2) as isize;
    let sample_len = s.sample_len();
    let out_plane = out_h * out_w;

    let want0 = f0.requires_grad();
    let want1 = f1.requires_grad();
    let mut df0 = if want0 { Some(vec![0.0f32; s.numel()]) } else { None };
    let mut df1 = if want1 { Some(vec![0.0f32; s.numel()]) } else { None };

    let mut v0 = vec![0.0f32; d2 * s.c];
    let mut v1 = vec![0.0f32; d2 * s.c];
    let mut dv0 = vec![0.0f32; d2 * s.c];
    let mut dv1 = vec![0.0f32; d2 * s.c];

    for b in 0..s.b {
        let d0 = &f0.data()[b * sample_len..(b + 1) * sample_len];
        let d1 = &f1.data()[b * sample_len..(b + 1) * sample_len];
        for oi in 0..out_h {
            for oj in 0..out_w {
                let yk = oi as f32 * inv_scale;
                let xk = oj as f32 * inv_scale;
                let mut widx = 0;
                for di in -r..=r {
                    for dj in -r..=r {
                        let y = yk + di as f32;
                        let x = xk + dj as f32;
                        sample_vec_zero(d0, s.c, s.h, s.w, y, x, &mut v0[widx * s.c..(widx + 1) * s.c]);
                        sample_vec_zero(d1, s.c, s.h, s.w, y, x, &mut v1[widx * s.c..(widx + 1) * s.c]);
                        widx += 1;
                    }
                }
                dv0.fill(0.0);
                dv1.fill(0.0);
                let px = oi * out_w + oj;
                for w0 in 0..d2 {
                    for w1 in 0..d2 {
                        let g = dy[(b * d4 + w0 * d2 + w1) * out_plane + px] * inv_sqrt_c;
                        if g == 0.0 {
                            continue;
                        }
                        for ch in 0..s.c {
                            dv0[w0 * s.c + ch] += g * v1[w1 * s.c + ch];
                            dv1[w1 * s.c + ch] += g * v0[w0 * s.c + ch];
                        }
                    }
                }
                let mut widx = 0;
                for di in -r..=r {
                    for dj in -r..=r {
                        let y = yk + di as f32;
                        let x = xk + dj as f32;
                        if let Some(df0) = df0.as_mut() {
                            scatter_vec_zero(
                                &mut df0[b * sample_len..(b + 1) * sample_len],
                                s.c,
                                s.h,
                                s.w,
                                y,
                                x,
                                &dv0[widx * s.c..(widx + 1) * s.c],
                            );
                        }
                        if let Some(df1) = df1.as_mut() {
                            scatter_vec_zero(
                                &mut df1[b * sample_len..(b + 1) * sample_len],
                                s.c,
                                s.h,
                                s.w,
                                y,
                                x,
                                &dv1[widx * s.c..(widx + 1) * s.c],
                            );
                        }
                        widx += 1;
                    }
                }
            }
        }
    }
    if let Some(df0) = df0 {
        acc.accumulate_owned(f0.id(), df0);
    }
    if let Some(df1) = df1 {
        acc.accumulate_owned(f1.id(), df1);
    }
}

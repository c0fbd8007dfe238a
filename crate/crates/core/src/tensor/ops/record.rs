//! Tape records: one variant per differentiable primitive, holding the
//! saved values its adjoint needs (input handles are cheap Arc clones).

use crate::tensor::tape::GradStore;
use crate::tensor::{Tensor, TensorId};

use super::{conv, corr, elem, resample};

pub(crate) enum Record {
    Conv2d {
        x: Tensor,
        w: Tensor,
        bias: Option<Tensor>,
        stride: usize,
        pad: usize,
        out_id: TensorId,
    },
    ConvT2d {
        x: Tensor,
        w: Tensor,
        bias: Option<Tensor>,
        stride: usize,
        pad: usize,
        out_id: TensorId,
    },
    Resize {
        x: Tensor,
        out_h: usize,
        out_w: usize,
        scale_values: f32,
        out_id: TensorId,
    },
    GridSample {
        img: Tensor,
        flow: Tensor,
        out_id: TensorId,
    },
    AvgPool2 {
        x: Tensor,
        out_id: TensorId,
    },
    LeakyRelu {
        x: Tensor,
        slope: f32,
        out_id: TensorId,
    },
    Sigmoid {
        x: Tensor,
        y: Tensor,
        out_id: TensorId,
    },
    Add {
        a: Tensor,
        b: Tensor,
        out_id: TensorId,
    },
    Sub {
        a: Tensor,
        b: Tensor,
        out_id: TensorId,
    },
    Mul {
        a: Tensor,
        b: Tensor,
        out_id: TensorId,
    },
    /// `a * b` where `b` has a single channel broadcast over `a`'s channels.
    MulBcast {
        a: Tensor,
        b: Tensor,
        out_id: TensorId,
    },
    Affine {
        x: Tensor,
        scale: f32,
        out_id: TensorId,
    },
    Abs {
        x: Tensor,
        out_id: TensorId,
    },
    Clamp01 {
        x: Tensor,
        out_id: TensorId,
    },
    Concat {
        xs: Vec<Tensor>,
        out_id: TensorId,
    },
    SliceC {
        x: Tensor,
        c0: usize,
        c1: usize,
        out_id: TensorId,
    },
    Mean {
        x: Tensor,
        out_id: TensorId,
    },
    PadHw {
        x: Tensor,
        out_h: usize,
        out_w: usize,
        out_id: TensorId,
    },
    CropHw {
        x: Tensor,
        out_h: usize,
        out_w: usize,
        out_id: TensorId,
    },
    MatchScale {
        f0: Tensor,
        f1: Tensor,
        window: usize,
        scale_idx: usize,
        out_h: usize,
        out_w: usize,
        out_id: TensorId,
    },
}

impl Record {
    pub(crate) fn out_id(&self) -> TensorId {
        match self {
            Record::Conv2d { out_id, .. }
            | Record::ConvT2d { out_id, .. }
            | Record::Resize { out_id, .. }
            | Record::GridSample { out_id, .. }
            | Record::AvgPool2 { out_id, .. }
            | Record::LeakyRelu { out_id, .. }
            | Record::Sigmoid { out_id, .. }
            | Record::Add { out_id, .. }
            | Record::Sub { out_id, .. }
            | Record::Mul { out_id, .. }
            | Record::MulBcast { out_id, .. }
            | Record::Affine { out_id, .. }
            | Record::Abs { out_id, .. }
            | Record::Clamp01 { out_id, .. }
            | Record::Concat { out_id, .. }
            | Record::SliceC { out_id, .. }
            | Record::Mean { out_id, .. }
            | Record::PadHw { out_id, .. }
            | Record::CropHw { out_id, .. }
            | Record::MatchScale { out_id, .. } => *out_id,
        }
    }

    pub(crate) fn backward(&self, dy: &[f32], acc: &mut GradStore) {
        match self {
            Record::Conv2d { x, w, bias, stride, pad, .. } => {
                conv::conv2d_backward(x, w, bias.as_ref(), *stride, *pad, dy, acc);
            }
            Record::ConvT2d { x, w, bias, stride, pad, .. } => {
                conv::conv_transpose2d_backward(x, w, bias.as_ref(), *stride, *pad, dy, acc);
            }
            Record::Resize { x, out_h, out_w, scale_values, .. } => {
                resample::resize_backward(x, *out_h, *out_w, *scale_values, dy, acc);
            }
            Record::GridSample { img, flow, .. } => {
                resample::grid_sample_backward(img, flow, dy, acc);
            }
            Record::AvgPool2 { x, .. } => {
                resample::avg_pool2_backward(x, dy, acc);
            }
            Record::LeakyRelu { x, slope, .. } => {
                if x.requires_grad() {
                    let g: Vec<f32> = x
                        .data()
                        .iter()
                        .zip(dy)
                        .map(|(&v, &d)| if v >= 0.0 { d } else { d * slope })
                        .collect();
                    acc.accumulate_owned(x.id(), g);
                }
            }
            Record::Sigmoid { x, y, .. } => {
                if x.requires_grad() {
                    let g: Vec<f32> =
                        y.data().iter().zip(dy).map(|(&s, &d)| d * s * (1.0 - s)).collect();
                    acc.accumulate_owned(x.id(), g);
                }
            }
            Record::Add { a, b, .. } => {
                if a.requires_grad() {
                    acc.accumulate(a.id(), dy);
                }
                if b.requires_grad() {
                    acc.accumulate(b.id(), dy);
                }
            }
            Record::Sub { a, b, .. } => {
                if a.requires_grad() {
                    acc.accumulate(a.id(), dy);
                }
                if b.requires_grad() {
                    let g: Vec<f32> = dy.iter().map(|d| -d).collect();
                    acc.accumulate_owned(b.id(), g);
                }
            }
            Record::Mul { a, b, .. } => {
                if a.requires_grad() {
                    let g: Vec<f32> = b.data().iter().zip(dy).map(|(&v, &d)| v * d).collect();
                    acc.accumulate_owned(a.id(), g);
                }
                if b.requires_grad() {
                    let g: Vec<f32> = a.data().iter().zip(dy).map(|(&v, &d)| v * d).collect();
                    acc.accumulate_owned(b.id(), g);
                }
            }
            Record::MulBcast { a, b, .. } => {
                elem::mul_bcast_backward(a, b, dy, acc);
            }
            Record::Affine { x, scale, .. } => {
                if x.requires_grad() {
                    let g: Vec<f32> = dy.iter().map(|d| d * scale).collect();
                    acc.accumulate_owned(x.id(), g);
                }
            }
            Record::Abs { x, .. } => {
                if x.requires_grad() {
                    let g: Vec<f32> = x
                        .data()
                        .iter()
                        .zip(dy)
                        .map(|(&v, &d)| {
                            if v > 0.0 {
                                d
                            } else if v < 0.0 {
                                -d
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    acc.accumulate_owned(x.id(), g);
                }
            }
            Record::Clamp01 { x, .. } => {
                if x.requires_grad() {
                    let g: Vec<f32> = x
                        .data()
                        .iter()
                        .zip(dy)
                        .map(|(&v, &d)| if (0.0..=1.0).contains(&v) { d } else { 0.0 })
                        .collect();
                    acc.accumulate_owned(x.id(), g);
                }
            }
            Record::Concat { xs, .. } => {
                elem::concat_backward(xs, dy, acc);
            }
            Record::SliceC { x, c0, c1, .. } => {
                elem::slice_backward(x, *c0, *c1, dy, acc);
            }
            Record::Mean { x, .. } => {
                if x.requires_grad() {
                    let n = x.shape().numel();
                    let g = vec![dy[0] / n as f32; n];
                    acc.accumulate_owned(x.id(), g);
                }
            }
            Record::PadHw { x, out_h, out_w, .. } => {
                elem::pad_backward(x, *out_h, *out_w, dy, acc);
            }
            Record::CropHw { x, out_h, out_w, .. } => {
                elem::crop_backward(x, *out_h, *out_w, dy, acc);
            }
            Record::MatchScale { f0, f1, window, scale_idx, out_h, out_w, .. } => {
                corr::match_scale_backward(f0, f1, *window, *scale_idx, *out_h, *out_w, dy, acc);
            }
        }
    }
}

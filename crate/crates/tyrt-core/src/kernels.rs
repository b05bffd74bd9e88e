//! Integer kernels the runtime executes, plus their float twins used for
//! calibration and as test oracles. All int8 kernels are pure, deterministic,
//! and bit-exact across platforms: accumulation is int32, requantization goes
//! through one f64 multiply with round-half-away-from-zero.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::quant::{
    build_act_lut, clamp_i8, lut_apply, requant_multiplier, requantize, round_half_away, ActKind,
    QParams,
};
use crate::tensor::{FloatTensor, QuantTensor, Shape};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KernelError {
    ShapeMismatch { expected: usize, got: usize },
    OutputTooSmall,
    QParamsMismatch,
    BadWeightLength { expected: usize, got: usize },
    BadBiasLength { expected: usize, got: usize },
    EmptyConcat,
}

impl fmt::Display for KernelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelError::ShapeMismatch { expected, got } => {
                write!(f, "input channel mismatch: expected {expected}, got {got}")
            }
            KernelError::OutputTooSmall => write!(f, "output spatial dimension < 1"),
            KernelError::QParamsMismatch => write!(f, "concat inputs must share qparams"),
            KernelError::BadWeightLength { expected, got } => {
                write!(f, "weight length {got}, expected {expected}")
            }
            KernelError::BadBiasLength { expected, got } => {
                write!(f, "bias length {got}, expected {expected}")
            }
            KernelError::EmptyConcat => write!(f, "concat needs at least one input"),
        }
    }
}

/// Output extent of a strided window op: floor((in + 2p − k)/s) + 1.
pub fn out_dim(input: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = input + 2 * p;
    if padded < k {
        return None;
    }
    Some((padded - k) / s + 1)
}

/// Convolution descriptor carrying quantized weights.
///
/// Weight layout is OIHW; bias is pre-quantized to int32 in (s_in · s_w) units.
#[derive(Debug, Clone)]
pub struct ConvDesc {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub weights: Vec<i8>,
    pub bias: Vec<i32>,
    pub weight_qparams: QParams,
    pub output_qparams: QParams,
}

impl ConvDesc {
    pub fn validate(&self) -> Result<(), KernelError> {
        let wlen = self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1;
        if self.weights.len() != wlen {
            return Err(KernelError::BadWeightLength { expected: wlen, got: self.weights.len() });
        }
        if self.bias.len() != self.out_channels {
            return Err(KernelError::BadBiasLength {
                expected: self.out_channels,
                got: self.bias.len(),
            });
        }
        Ok(())
    }
}

/// Quantized 2-D convolution.
///
/// acc = Σ (x − zp_x)(w − zp_w) + bias, then requantized to `output_qparams`.
/// Padding contributes zero because padded input is taken at zp_x.
pub fn conv2d_q(input: &QuantTensor, desc: &ConvDesc) -> Result<QuantTensor, KernelError> {
    desc.validate()?;
    if input.shape.c != desc.in_channels {
        return Err(KernelError::ShapeMismatch { expected: desc.in_channels, got: input.shape.c });
    }
    let oh = out_dim(input.shape.h, desc.kernel.0, desc.stride.0, desc.padding.0)
        .ok_or(KernelError::OutputTooSmall)?;
    let ow = out_dim(input.shape.w, desc.kernel.1, desc.stride.1, desc.padding.1)
        .ok_or(KernelError::OutputTooSmall)?;
    let m = requant_multiplier(input.q.scale, desc.weight_qparams.scale, desc.output_qparams.scale);
    let data = conv2d_codes(
        &input.data,
        (input.shape.c, input.shape.h, input.shape.w),
        input.q.zero_point,
        &desc.weights,
        desc.weight_qparams.zero_point,
        &desc.bias,
        desc.out_channels,
        desc.kernel,
        desc.stride,
        desc.padding,
        m,
        desc.output_qparams.zero_point,
    );
    Ok(QuantTensor::new(
        Shape::new(input.shape.n, desc.out_channels, oh, ow),
        data,
        desc.output_qparams,
    ))
}

/// Core integer conv over raw code slices; shared by the plain and tiled executors.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_codes(
    x: &[i8],
    (cin, h, w): (usize, usize, usize),
    zp_x: i8,
    weights: &[i8],
    zp_w: i8,
    bias: &[i32],
    cout: usize,
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
    m: f64,
    zp_out: i8,
) -> Vec<i8> {
    let oh = out_dim(h, kh, sh, ph).expect("validated");
    let ow = out_dim(w, kw, sw, pw).expect("validated");
    let zpx = zp_x as i32;
    let zpw = zp_w as i32;
    let mut out = vec![0i8; cout * oh * ow];
    for oc in 0..cout {
        let wbase = oc * cin * kh * kw;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..cin {
                    for ky in 0..kh {
                        let iy = (oy * sh + ky) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue; // padded row: (zp_x − zp_x) = 0 contribution
                        }
                        let xrow = (ic * h + iy as usize) * w;
                        let wrow = wbase + (ic * kh + ky) * kw;
                        for kx in 0..kw {
                            let ix = (ox * sw + kx) as isize - pw as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xv = x[xrow + ix as usize] as i32 - zpx;
                            let wv = weights[wrow + kx] as i32 - zpw;
                            acc += xv * wv;
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = requantize(acc, m, zp_out);
            }
        }
    }
    out
}

/// Activation through a 256-entry LUT.
pub fn act_q(t: &QuantTensor, kind: ActKind, out_q: QParams) -> QuantTensor {
    let lut = build_act_lut(t.q, out_q, kind);
    let data = t.data.iter().map(|&c| lut_apply(c, &lut)).collect();
    QuantTensor::new(t.shape, data, out_q)
}

/// Max pooling on int8 codes. Valid because quantization is monotone.
/// Padded positions are treated as −∞ (never selected).
pub fn maxpool2d(
    t: &QuantTensor,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<QuantTensor, KernelError> {
    let oh = out_dim(t.shape.h, kernel.0, stride.0, padding.0).ok_or(KernelError::OutputTooSmall)?;
    let ow = out_dim(t.shape.w, kernel.1, stride.1, padding.1).ok_or(KernelError::OutputTooSmall)?;
    let (c, h, w) = (t.shape.c, t.shape.h, t.shape.w);
    let mut out = vec![0i8; t.shape.n * c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = i8::MIN;
                for ky in 0..kernel.0 {
                    let iy = (oy * stride.0 + ky) as isize - padding.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel.1 {
                        let ix = (ox * stride.1 + kx) as isize - padding.1 as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let v = t.data[(ch * h + iy as usize) * w + ix as usize];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out[(ch * oh + oy) * ow + ox] = best;
            }
        }
    }
    Ok(QuantTensor::new(Shape::new(t.shape.n, c, oh, ow), out, t.q))
}

/// Nearest-neighbor upsample by an integer factor.
pub fn upsample_nearest(t: &QuantTensor, factor: usize) -> QuantTensor {
    let (c, h, w) = (t.shape.c, t.shape.h, t.shape.w);
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![0i8; t.shape.n * c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            let iy = oy / factor;
            for ox in 0..ow {
                out[(ch * oh + oy) * ow + ox] = t.data[(ch * h + iy) * w + ox / factor];
            }
        }
    }
    QuantTensor::new(Shape::new(t.shape.n, c, oh, ow), out, t.q)
}

/// Channel concatenation. Inputs must agree on N, H, W and share qparams;
/// calibration unions the ranges of concat inputs so this holds by construction.
pub fn concat_channels(parts: &[&QuantTensor]) -> Result<QuantTensor, KernelError> {
    let first = *parts.first().ok_or(KernelError::EmptyConcat)?;
    let (n, h, w) = (first.shape.n, first.shape.h, first.shape.w);
    let mut c_total = 0;
    for p in parts {
        if p.shape.n != n || p.shape.h != h || p.shape.w != w {
            return Err(KernelError::ShapeMismatch { expected: h * w, got: p.shape.h * p.shape.w });
        }
        if p.q != first.q {
            return Err(KernelError::QParamsMismatch);
        }
        c_total += p.shape.c;
    }
    let mut data = Vec::with_capacity(n * c_total * h * w);
    for p in parts {
        data.extend_from_slice(&p.data);
    }
    Ok(QuantTensor::new(Shape::new(n, c_total, h, w), data, first.q))
}

/// Elementwise add with per-input requantization into `out_q`.
pub fn add_q(a: &QuantTensor, b: &QuantTensor, out_q: QParams) -> Result<QuantTensor, KernelError> {
    if a.shape != b.shape {
        return Err(KernelError::ShapeMismatch { expected: a.shape.numel(), got: b.shape.numel() });
    }
    let sa = a.q.scale as f64 / out_q.scale as f64;
    let sb = b.q.scale as f64 / out_q.scale as f64;
    let (zpa, zpb) = (a.q.zero_point as i32, b.q.zero_point as i32);
    let data = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(&x, &y)| {
            let v = (x as i32 - zpa) as f64 * sa + (y as i32 - zpb) as f64 * sb;
            clamp_i8(round_half_away(v) + out_q.zero_point as f64)
        })
        .collect();
    Ok(QuantTensor::new(a.shape, data, out_q))
}

// ---- float twins ----

pub fn conv2d_f32(
    input: &FloatTensor,
    weights: &[f32],
    bias: &[f32],
    cout: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> FloatTensor {
    let (cin, h, w) = (input.shape.c, input.shape.h, input.shape.w);
    let oh = out_dim(h, kernel.0, stride.0, padding.0).expect("output too small");
    let ow = out_dim(w, kernel.1, stride.1, padding.1).expect("output too small");
    let mut out = FloatTensor::zeros(Shape::new(input.shape.n, cout, oh, ow));
    for oc in 0..cout {
        let wbase = oc * cin * kernel.0 * kernel.1;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..cin {
                    for ky in 0..kernel.0 {
                        let iy = (oy * stride.0 + ky) as isize - padding.0 as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel.1 {
                            let ix = (ox * stride.1 + kx) as isize - padding.1 as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += input.at(0, ic, iy as usize, ix as usize)
                                * weights[wbase + (ic * kernel.0 + ky) * kernel.1 + kx];
                        }
                    }
                }
                let i = out.shape.index(0, oc, oy, ox);
                out.data[i] = acc;
            }
        }
    }
    out
}

pub fn act_f32(t: &FloatTensor, kind: ActKind) -> FloatTensor {
    FloatTensor::new(t.shape, t.data.iter().map(|&x| kind.eval_f32(x)).collect())
}

pub fn maxpool2d_f32(
    t: &FloatTensor,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> FloatTensor {
    let (c, h, w) = (t.shape.c, t.shape.h, t.shape.w);
    let oh = out_dim(h, kernel.0, stride.0, padding.0).expect("output too small");
    let ow = out_dim(w, kernel.1, stride.1, padding.1).expect("output too small");
    let mut out = FloatTensor::zeros(Shape::new(t.shape.n, c, oh, ow));
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                for ky in 0..kernel.0 {
                    let iy = (oy * stride.0 + ky) as isize - padding.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel.1 {
                        let ix = (ox * stride.1 + kx) as isize - padding.1 as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        best = best.max(t.at(0, ch, iy as usize, ix as usize));
                    }
                }
                let i = out.shape.index(0, ch, oy, ox);
                out.data[i] = best;
            }
        }
    }
    out
}

pub fn upsample_nearest_f32(t: &FloatTensor, factor: usize) -> FloatTensor {
    let (c, h, w) = (t.shape.c, t.shape.h, t.shape.w);
    let (oh, ow) = (h * factor, w * factor);
    let mut out = FloatTensor::zeros(Shape::new(t.shape.n, c, oh, ow));
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let i = out.shape.index(0, ch, oy, ox);
                out.data[i] = t.at(0, ch, oy / factor, ox / factor);
            }
        }
    }
    out
}

pub fn concat_channels_f32(parts: &[&FloatTensor]) -> FloatTensor {
    let first = parts[0];
    let (n, h, w) = (first.shape.n, first.shape.h, first.shape.w);
    let c_total: usize = parts.iter().map(|p| p.shape.c).sum();
    let mut data = Vec::with_capacity(n * c_total * h * w);
    for p in parts {
        assert_eq!((p.shape.n, p.shape.h, p.shape.w), (n, h, w));
        data.extend_from_slice(&p.data);
    }
    FloatTensor::new(Shape::new(n, c_total, h, w), data)
}

pub fn add_f32(a: &FloatTensor, b: &FloatTensor) -> FloatTensor {
    assert_eq!(a.shape, b.shape);
    FloatTensor::new(a.shape, a.data.iter().zip(b.data.iter()).map(|(x, y)| x + y).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::QParams;

    fn unit_q() -> QParams {
        QParams::new(1.0, 0)
    }

    #[test]
    fn scalar_conv_product() {
        let input = QuantTensor::new(Shape::new(1, 1, 1, 1), vec![3], unit_q());
        let desc = ConvDesc {
            in_channels: 1,
            out_channels: 1,
            kernel: (1, 1),
            stride: (1, 1),
            padding: (0, 0),
            weights: vec![2],
            bias: vec![0],
            weight_qparams: QParams::symmetric(1.0),
            output_qparams: unit_q(),
        };
        let out = conv2d_q(&input, &desc).unwrap();
        assert_eq!(out.data, vec![6]);
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let codes: Vec<i8> = (0..16).map(|i| i - 8).collect();
        let input = QuantTensor::new(Shape::new(1, 1, 4, 4), codes.clone(), unit_q());
        let desc = ConvDesc {
            in_channels: 1,
            out_channels: 1,
            kernel: (1, 1),
            stride: (1, 1),
            padding: (0, 0),
            weights: vec![1],
            bias: vec![0],
            weight_qparams: QParams::symmetric(1.0),
            output_qparams: unit_q(),
        };
        let out = conv2d_q(&input, &desc).unwrap();
        assert_eq!(out.data, codes);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let input = QuantTensor::filled(Shape::new(1, 2, 4, 4), 0, unit_q());
        let desc = ConvDesc {
            in_channels: 3,
            out_channels: 1,
            kernel: (1, 1),
            stride: (1, 1),
            padding: (0, 0),
            weights: vec![1, 1, 1],
            bias: vec![0],
            weight_qparams: QParams::symmetric(1.0),
            output_qparams: unit_q(),
        };
        assert!(matches!(conv2d_q(&input, &desc), Err(KernelError::ShapeMismatch { .. })));
    }

    #[test]
    fn conv_rejects_too_small_output() {
        let input = QuantTensor::filled(Shape::new(1, 1, 2, 2), 0, unit_q());
        let desc = ConvDesc {
            in_channels: 1,
            out_channels: 1,
            kernel: (3, 3),
            stride: (1, 1),
            padding: (0, 0),
            weights: vec![0; 9],
            bias: vec![0],
            weight_qparams: QParams::symmetric(1.0),
            output_qparams: unit_q(),
        };
        assert_eq!(conv2d_q(&input, &desc), Err(KernelError::OutputTooSmall));
    }

    #[test]
    fn maxpool_basic() {
        let input = QuantTensor::new(Shape::new(1, 1, 2, 2), vec![1, 2, 3, 4], unit_q());
        let out = maxpool2d(&input, (2, 2), (2, 2), (0, 0)).unwrap();
        assert_eq!(out.data, vec![4]);
        assert_eq!(out.shape, Shape::new(1, 1, 1, 1));
    }

    #[test]
    fn maxpool_padded_ignores_border() {
        // 5x5 window, stride 1, pad 2 on a 2x2 input: padding never wins
        let input = QuantTensor::new(Shape::new(1, 1, 2, 2), vec![-5, -6, -7, -8], unit_q());
        let out = maxpool2d(&input, (5, 5), (1, 1), (2, 2)).unwrap();
        assert_eq!(out.shape, Shape::new(1, 1, 2, 2));
        assert!(out.data.iter().all(|&v| v == -5));
    }

    #[test]
    fn upsample_repeats_pixels() {
        let input = QuantTensor::new(Shape::new(1, 1, 1, 1), vec![7], unit_q());
        let out = upsample_nearest(&input, 2);
        assert_eq!(out.shape, Shape::new(1, 1, 2, 2));
        assert_eq!(out.data, vec![7, 7, 7, 7]);
    }

    #[test]
    fn concat_layout_elementwise() {
        let q = unit_q();
        let a = QuantTensor::new(Shape::new(1, 3, 2, 2), (0..12).map(|v| v as i8).collect(), q);
        let b = QuantTensor::new(Shape::new(1, 5, 2, 2), (12..32).map(|v| v as i8).collect(), q);
        let out = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(out.shape.c, 8);
        for c in 0..8 {
            for y in 0..2 {
                for x in 0..2 {
                    let expect = if c < 3 { a.at(0, c, y, x) } else { b.at(0, c - 3, y, x) };
                    assert_eq!(out.at(0, c, y, x), expect);
                }
            }
        }
    }

    #[test]
    fn concat_rejects_qparams_mismatch() {
        let a = QuantTensor::filled(Shape::new(1, 1, 2, 2), 0, QParams::new(1.0, 0));
        let b = QuantTensor::filled(Shape::new(1, 1, 2, 2), 0, QParams::new(0.5, 0));
        assert_eq!(concat_channels(&[&a, &b]), Err(KernelError::QParamsMismatch));
    }

    #[test]
    fn add_requantizes_both_sides() {
        let a = QuantTensor::new(Shape::new(1, 1, 1, 2), vec![10, -10], QParams::new(0.5, 0));
        let b = QuantTensor::new(Shape::new(1, 1, 1, 2), vec![4, 4], QParams::new(1.0, 2));
        // real a = [5, -5], real b = [2, 2]; sum = [7, -3]; out scale 0.5 → codes [14, -6]
        let out = add_q(&a, &b, QParams::new(0.5, 0)).unwrap();
        assert_eq!(out.data, vec![14, -6]);
    }

    #[test]
    fn maxpool_commutes_with_quantization() {
        let q = QParams::new(0.043, -11);
        let vals: Vec<f32> = (0..36).map(|i| ((i * 37 % 19) as f32 - 9.0) * 0.21).collect();
        let ft = FloatTensor::new(Shape::new(1, 1, 6, 6), vals);
        let pooled_then_q = maxpool2d_f32(&ft, (2, 2), (2, 2), (0, 0)).quantize(q).unwrap();
        let q_then_pooled = maxpool2d(&ft.quantize(q).unwrap(), (2, 2), (2, 2), (0, 0)).unwrap();
        assert_eq!(pooled_then_q.data, q_then_pooled.data);
    }
}

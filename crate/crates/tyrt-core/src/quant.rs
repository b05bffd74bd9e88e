//! Affine int8 quantization: parameters, value mapping, requantization, activation LUTs.

use alloc::vec::Vec;
use core::fmt;

/// Per-tensor affine quantization parameters: real ≈ (code − zero_point) · scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QParams {
    pub scale: f32,
    pub zero_point: i8,
}

impl QParams {
    pub fn new(scale: f32, zero_point: i8) -> Self {
        assert!(scale > 0.0 && scale.is_finite(), "scale must be positive and finite");
        QParams { scale, zero_point }
    }

    /// Symmetric parameters (zero_point = 0), used for weights.
    pub fn symmetric(scale: f32) -> Self {
        Self::new(scale, 0)
    }

    pub fn quantize_value(&self, x: f32) -> i8 {
        let q = round_half_away(x as f64 / self.scale as f64) + self.zero_point as f64;
        clamp_i8(q)
    }

    pub fn dequantize_value(&self, code: i8) -> f32 {
        (code as i32 - self.zero_point as i32) as f32 * self.scale
    }
}

/// Round half away from zero. Fixed globally so results are platform-independent.
pub fn round_half_away(x: f64) -> f64 {
    libm::round(x)
}

pub fn clamp_i8(x: f64) -> i8 {
    if x <= -128.0 {
        -128
    } else if x >= 127.0 {
        127
    } else {
        x as i8
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuantError {
    /// Input element was NaN or infinite.
    NonFinite { index: usize },
}

impl fmt::Display for QuantError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuantError::NonFinite { index } => {
                write!(f, "non-finite input element at index {index}")
            }
        }
    }
}

/// Quantize a float slice; rejects non-finite elements with their index.
pub fn quantize_slice(x: &[f32], q: QParams) -> Result<Vec<i8>, QuantError> {
    let mut out = Vec::with_capacity(x.len());
    for (i, &v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(QuantError::NonFinite { index: i });
        }
        out.push(q.quantize_value(v));
    }
    Ok(out)
}

pub fn dequantize_slice(codes: &[i8], q: QParams) -> Vec<f32> {
    codes.iter().map(|&c| q.dequantize_value(c)).collect()
}

/// Fit affine parameters to an observed [min, max] range.
///
/// The range is first extended to include zero: real 0.0 must be exactly
/// representable (zero-padding relies on it), and a one-sided range would
/// otherwise push the zero point past the i8 limit, shifting the window so
/// the far end of the range saturates. Then scale = span / 255 and
/// zero_point = round(−128 − lo/scale), which lands in i8 by construction.
/// A degenerate range (lo = hi = 0) falls back to scale 1/255, zero_point −128.
pub fn qparams_from_range(min: f32, max: f32) -> QParams {
    debug_assert!(min <= max);
    let lo = (min as f64).min(0.0);
    let hi = (max as f64).max(0.0);
    let span = hi - lo;
    if span <= 0.0 || !span.is_finite() {
        return QParams::new(1.0 / 255.0, -128);
    }
    let scale = span / 255.0;
    let zp = clamp_i8(round_half_away(-128.0 - lo / scale));
    QParams::new(scale as f32, zp)
}

/// Requantization multiplier for a conv: (s_in · s_w) / s_out, carried in f64.
pub fn requant_multiplier(s_in: f32, s_w: f32, s_out: f32) -> f64 {
    (s_in as f64 * s_w as f64) / s_out as f64
}

/// Map an int32 accumulator into the output code domain.
#[inline]
pub fn requantize(acc: i32, m: f64, zp_out: i8) -> i8 {
    clamp_i8(round_half_away(acc as f64 * m) + zp_out as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActKind {
    /// x · sigmoid(x)
    Silu,
    /// max(x, 0.1·x)
    LeakyRelu,
}

impl ActKind {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ActKind::Silu => x / (1.0 + libm::exp(-x)),
            ActKind::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    0.1 * x
                }
            }
        }
    }

    pub fn eval_f32(&self, x: f32) -> f32 {
        match self {
            ActKind::Silu => x / (1.0 + libm::expf(-x)),
            ActKind::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    0.1 * x
                }
            }
        }
    }
}

/// 256-entry code-to-code lookup table for an activation under fixed in/out qparams.
pub fn build_act_lut(in_q: QParams, out_q: QParams, kind: ActKind) -> [i8; 256] {
    let mut lut = [0i8; 256];
    for code in -128i32..=127 {
        let x = (code - in_q.zero_point as i32) as f64 * in_q.scale as f64;
        let y = kind.eval(x);
        let q = round_half_away(y / out_q.scale as f64) + out_q.zero_point as f64;
        lut[(code + 128) as usize] = clamp_i8(q);
    }
    lut
}

#[inline]
pub fn lut_apply(code: i8, lut: &[i8; 256]) -> i8 {
    lut[(code as i32 + 128) as usize]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_grid_point() {
        let q = QParams::new(0.5, 0);
        assert_eq!(q.quantize_value(1.0), 2);
    }

    #[test]
    fn quantize_zero_maps_to_zero_point() {
        let q = QParams::new(0.123, 5);
        assert_eq!(q.quantize_value(0.0), 5);
    }

    #[test]
    fn quantize_saturates() {
        let q = QParams::new(0.5, 0);
        assert_eq!(q.quantize_value(1000.0), 127);
        assert_eq!(q.quantize_value(-1000.0), -128);
    }

    #[test]
    fn dequantize_inverse() {
        let q = QParams::new(0.5, 0);
        assert_eq!(q.dequantize_value(2), 1.0);
        let q = QParams::new(0.1, 5);
        assert_eq!(q.dequantize_value(5), 0.0);
    }

    #[test]
    fn non_finite_rejected_with_index() {
        let q = QParams::new(1.0, 0);
        let err = quantize_slice(&[0.0, f32::NAN, 1.0], q).unwrap_err();
        assert_eq!(err, QuantError::NonFinite { index: 1 });
    }

    #[test]
    fn round_half_away_from_zero() {
        assert_eq!(round_half_away(0.5), 1.0);
        assert_eq!(round_half_away(-0.5), -1.0);
        assert_eq!(round_half_away(2.5), 3.0);
        assert_eq!(round_half_away(-2.5), -3.0);
        assert_eq!(round_half_away(1.49), 1.0);
    }

    #[test]
    fn range_fit_symmetric_unit() {
        let q = qparams_from_range(-1.0, 1.0);
        assert!((q.scale - 2.0 / 255.0).abs() < 1e-9);
        // zero_point = round(-128 + 1/scale) = round(-0.5) = -1
        assert_eq!(q.zero_point, -1);
    }

    #[test]
    fn range_fit_degenerate() {
        let q = qparams_from_range(0.0, 0.0);
        assert!((q.scale - 1.0 / 255.0).abs() < 1e-9);
        assert_eq!(q.zero_point, -128);
    }

    #[test]
    fn range_fit_covers_endpoints() {
        for &(lo, hi) in &[(-3.2f32, 7.9f32), (0.0, 1.0), (-0.01, 0.02), (-255.0, 0.0)] {
            let q = qparams_from_range(lo, hi);
            let a = q.quantize_value(lo);
            let b = q.quantize_value(hi);
            // endpoints land on representable codes within one step
            assert!((q.dequantize_value(a) - lo).abs() <= q.scale);
            assert!((q.dequantize_value(b) - hi).abs() <= q.scale);
        }
    }

    #[test]
    fn range_fit_one_sided_keeps_far_end_representable() {
        // A range that excludes zero is widened to reach it; the far end must
        // not saturate and real zero must map to an exact code.
        for &(lo, hi) in &[(0.3f32, 7.3f32), (2.0, 2.5), (-9.0, -4.0)] {
            let q = qparams_from_range(lo, hi);
            assert!((q.dequantize_value(q.quantize_value(lo)) - lo).abs() <= q.scale);
            assert!((q.dequantize_value(q.quantize_value(hi)) - hi).abs() <= q.scale);
            assert_eq!(q.dequantize_value(q.quantize_value(0.0)), 0.0);
        }
    }

    #[test]
    fn silu_lut_zero_stays_near_zero() {
        let q = QParams::new(0.05, 0);
        let lut = build_act_lut(q, q, ActKind::Silu);
        assert_eq!(lut_apply(0, &lut), 0);
    }

    #[test]
    fn leaky_relu_lut_negative_slope() {
        // scale 0.01, code -100 = -1.0 real; LeakyReLU → -0.1 → code -10
        let q = QParams::new(0.01, 0);
        let lut = build_act_lut(q, q, ActKind::LeakyRelu);
        assert_eq!(lut_apply(-100, &lut), -10);
    }

    #[test]
    fn lut_matches_float_reference_all_codes() {
        let in_q = QParams::new(0.08, -3);
        let out_q = QParams::new(0.04, -7);
        for kind in [ActKind::Silu, ActKind::LeakyRelu] {
            let lut = build_act_lut(in_q, out_q, kind);
            for code in -128i32..=127 {
                let x = in_q.dequantize_value(code as i8) as f64;
                let expect = clamp_i8(
                    round_half_away(kind.eval(x) / out_q.scale as f64) + out_q.zero_point as f64,
                );
                assert_eq!(lut_apply(code as i8, &lut), expect);
            }
        }
    }
}

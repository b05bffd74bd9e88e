//! Tensor containers: int8 payload with qparams, plus a float twin for calibration and oracles.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::quant::{dequantize_slice, quantize_slice, QParams, QuantError};

/// NCHW shape. Batch is carried for completeness; the runtime executes N = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub shape: Shape,
    pub data: Vec<i8>,
    pub q: QParams,
}

impl QuantTensor {
    pub fn new(shape: Shape, data: Vec<i8>, q: QParams) -> Self {
        assert_eq!(data.len(), shape.numel(), "data length must match shape");
        QuantTensor { shape, data, q }
    }

    pub fn filled(shape: Shape, code: i8, q: QParams) -> Self {
        QuantTensor { data: vec![code; shape.numel()], shape, q }
    }

    pub fn from_f32(shape: Shape, data: &[f32], q: QParams) -> Result<Self, QuantError> {
        assert_eq!(data.len(), shape.numel());
        Ok(QuantTensor { shape, data: quantize_slice(data, q)?, q })
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> i8 {
        self.data[self.shape.index(n, c, y, x)]
    }

    pub fn dequantize(&self) -> FloatTensor {
        FloatTensor { shape: self.shape, data: dequantize_slice(&self.data, self.q) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatTensor {
    pub shape: Shape,
    pub data: Vec<f32>,
}

impl FloatTensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), shape.numel(), "data length must match shape");
        FloatTensor { shape, data }
    }

    pub fn zeros(shape: Shape) -> Self {
        FloatTensor { data: vec![0.0; shape.numel()], shape }
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.shape.index(n, c, y, x)]
    }

    pub fn quantize(&self, q: QParams) -> Result<QuantTensor, QuantError> {
        QuantTensor::from_f32(self.shape, &self.data, q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_row_major_nchw() {
        let s = Shape::new(1, 2, 3, 4);
        assert_eq!(s.index(0, 0, 0, 0), 0);
        assert_eq!(s.index(0, 0, 0, 1), 1);
        assert_eq!(s.index(0, 0, 1, 0), 4);
        assert_eq!(s.index(0, 1, 0, 0), 12);
        assert_eq!(s.numel(), 24);
    }

    #[test]
    fn quantize_roundtrip_within_half_step() {
        let q = QParams::new(0.02, 3);
        let xs: Vec<f32> = (0..100).map(|i| -1.0 + 0.023 * i as f32).collect();
        let t = QuantTensor::from_f32(Shape::new(1, 1, 10, 10), &xs, q).unwrap();
        let back = t.dequantize();
        for (orig, rec) in xs.iter().zip(back.data.iter()) {
            if *orig > -128.0 * 0.02 && *orig < 127.0 * 0.02 {
                assert!((orig - rec).abs() <= 0.02 / 2.0 + 1e-6);
            }
        }
    }
}

//! Weight storage: float master copies (used for calibration and as the
//! serialization source of truth) plus derived int8 weights, int32 biases,
//! and per-tensor activation qparams.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{GraphSpec, LayerId, LayerKind};
use crate::quant::{clamp_i8, qparams_from_range, round_half_away, QParams};

/// Float master weights of one conv layer (OIHW, plus per-channel bias).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub w: Vec<f32>,
    pub b: Vec<f32>,
}

/// Int8 weights derived from the master: symmetric per-tensor scale,
/// bias pre-quantized into (s_in · s_w) units.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantConv {
    pub w_q: Vec<i8>,
    pub w_scale: f32,
    pub b_q: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightError {
    MissingWeights { layer: LayerId },
    BadLength { layer: LayerId, expected: usize, got: usize },
    NotQuantized { layer: LayerId },
}

impl fmt::Display for WeightError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightError::MissingWeights { layer } => write!(f, "layer {layer} has no weights"),
            WeightError::BadLength { layer, expected, got } => {
                write!(f, "layer {layer}: weight length {got}, expected {expected}")
            }
            WeightError::NotQuantized { layer } => {
                write!(f, "layer {layer} has no quantized weights; quantize first")
            }
        }
    }
}

/// Default activation range assigned at build time so an uncalibrated model
/// still executes deterministically. Calibration replaces these.
pub const DEFAULT_ACT_RANGE: (f32, f32) = (-8.0, 8.0);
/// Network input is a normalized image in [0, 1].
pub const INPUT_RANGE: (f32, f32) = (0.0, 1.0);

#[derive(Debug, Clone)]
pub struct WeightStore {
    /// Float master per layer; None for non-conv layers.
    pub master: Vec<Option<ConvWeights>>,
    /// Derived int8 weights per layer; filled by `quantize_weights`.
    pub quant: Vec<Option<QuantConv>>,
    /// Output qparams per layer (post-activation for convs with one).
    pub act_q: Vec<QParams>,
    /// Conv-raw qparams for convs that feed an activation LUT.
    pub pre_act_q: Vec<Option<QParams>>,
}

impl WeightStore {
    /// Empty store with default qparams everywhere.
    pub fn new(g: &GraphSpec) -> Self {
        let n = g.layers.len();
        let default_q = qparams_from_range(DEFAULT_ACT_RANGE.0, DEFAULT_ACT_RANGE.1);
        let mut act_q = vec![default_q; n];
        act_q[0] = qparams_from_range(INPUT_RANGE.0, INPUT_RANGE.1);
        let mut pre_act_q = vec![None; n];
        for (id, layer) in g.layers.iter().enumerate() {
            if let LayerKind::Conv(c) = &layer.kind {
                if c.act.is_some() {
                    pre_act_q[id] = Some(default_q);
                }
            }
        }
        WeightStore { master: vec![None; n], quant: vec![None; n], act_q, pre_act_q }
    }

    /// Seeded random master weights: uniform ±sqrt(6/fan_in), zero bias.
    /// The same seed always produces bit-identical weights.
    pub fn random_init(g: &GraphSpec, seed: u64) -> Self {
        let mut store = Self::new(g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (id, layer) in g.layers.iter().enumerate() {
            if let LayerKind::Conv(c) = &layer.kind {
                let fan_in = (c.k * c.k * c.cin) as f32;
                let limit = libm::sqrtf(6.0 / fan_in);
                let w = (0..c.weight_len()).map(|_| rng.gen_range(-limit..=limit)).collect();
                let b = vec![0.0; c.cout];
                store.master[id] = Some(ConvWeights { w, b });
            }
        }
        store
    }

    pub fn set_master(
        &mut self,
        g: &GraphSpec,
        layer: LayerId,
        w: Vec<f32>,
        b: Vec<f32>,
    ) -> Result<(), WeightError> {
        let LayerKind::Conv(c) = &g.layers[layer].kind else {
            return Err(WeightError::MissingWeights { layer });
        };
        if w.len() != c.weight_len() {
            return Err(WeightError::BadLength { layer, expected: c.weight_len(), got: w.len() });
        }
        if b.len() != c.cout {
            return Err(WeightError::BadLength { layer, expected: c.cout, got: b.len() });
        }
        self.master[layer] = Some(ConvWeights { w, b });
        Ok(())
    }

    /// Check every conv layer has a master entry of the right length.
    pub fn validate_masters(&self, g: &GraphSpec) -> Result<(), WeightError> {
        for (id, layer) in g.layers.iter().enumerate() {
            if let LayerKind::Conv(c) = &layer.kind {
                let m = self.master[id].as_ref().ok_or(WeightError::MissingWeights { layer: id })?;
                if m.w.len() != c.weight_len() {
                    return Err(WeightError::BadLength {
                        layer: id,
                        expected: c.weight_len(),
                        got: m.w.len(),
                    });
                }
                if m.b.len() != c.cout {
                    return Err(WeightError::BadLength {
                        layer: id,
                        expected: c.cout,
                        got: m.b.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Symmetric per-tensor weight quantization plus bias requantization into
    /// (s_in · s_w) units. Requires activation qparams to be final, because
    /// the bias scale depends on each conv's input scale.
    pub fn quantize_weights(&mut self, g: &GraphSpec) -> Result<(), WeightError> {
        self.validate_masters(g)?;
        for (id, layer) in g.layers.iter().enumerate() {
            let LayerKind::Conv(_) = &layer.kind else { continue };
            let m = self.master[id].as_ref().unwrap();
            let mut max_abs = 0f32;
            for &v in &m.w {
                max_abs = max_abs.max(v.abs());
            }
            let w_scale = if max_abs > 0.0 { max_abs / 127.0 } else { 1.0 / 127.0 };
            let w_q = m
                .w
                .iter()
                .map(|&v| clamp_i8(round_half_away(v as f64 / w_scale as f64)))
                .collect();
            let s_in = self.act_q[layer.inputs[0]].scale;
            let bias_scale = s_in as f64 * w_scale as f64;
            let b_q = m
                .b
                .iter()
                .map(|&v| {
                    let q = round_half_away(v as f64 / bias_scale);
                    q.clamp(i32::MIN as f64, i32::MAX as f64) as i32
                })
                .collect();
            self.quant[id] = Some(QuantConv { w_q, w_scale, b_q });
        }
        Ok(())
    }

    pub fn quant_conv(&self, layer: LayerId) -> Result<&QuantConv, WeightError> {
        self.quant[layer].as_ref().ok_or(WeightError::NotQuantized { layer })
    }
}

//! Flat layer graph: every network variant lowers to the same small vocabulary
//! of primitive layers (conv, maxpool, upsample, concat, add), executed in
//! construction order. Layer inputs always reference earlier layers, so the
//! graph is acyclic by construction and validation re-checks it.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::kernels::out_dim;
use crate::quant::ActKind;

pub type LayerId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Version {
    V1_3,
    V5,
    V8,
    V10,
}

impl Version {
    pub fn as_str(&self) -> &'static str {
        match self {
            Version::V1_3 => "v1.3",
            Version::V5 => "v5",
            Version::V8 => "v8",
            Version::V10 => "v10",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeVariant {
    Small,
    Big,
}

impl SizeVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            SizeVariant::Small => "small",
            SizeVariant::Big => "big",
        }
    }
}

/// How head tensors are decoded downstream: v8-style multi-label cells that
/// need NMS, or v10-style one-to-one cells (argmax per cell, no NMS).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectKind {
    V8,
    V10,
}

/// Channel-height-width of one layer output (batch is always 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chw {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Chw {
    pub fn numel(&self) -> usize {
        self.c * self.h * self.w
    }
}

impl fmt::Display for Chw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub s: usize,
    pub p: usize,
    pub act: Option<ActKind>,
}

impl ConvSpec {
    pub fn weight_len(&self) -> usize {
        self.k * self.k * self.cin * self.cout
    }

    pub fn params(&self) -> u64 {
        (self.weight_len() + self.cout) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Input,
    Conv(ConvSpec),
    MaxPool { k: usize, s: usize, p: usize },
    Upsample { factor: usize },
    Concat,
    Add,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input => "input",
            LayerKind::Conv(_) => "conv",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::Upsample { .. } => "upsample",
            LayerKind::Concat => "concat",
            LayerKind::Add => "add",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<LayerId>,
    pub out: Chw,
}

/// One detection scale: the layer producing the head tensor and its stride
/// relative to the input image.
#[derive(Debug, Clone, Copy)]
pub struct HeadScale {
    pub layer: LayerId,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct GraphSpec {
    pub version: Version,
    pub size: SizeVariant,
    pub width_multiple: f64,
    pub depth_multiple: f64,
    pub num_classes: usize,
    pub input_resolution: usize,
    pub layers: Vec<LayerSpec>,
    pub heads: Vec<HeadScale>,
    pub detect_kind: DetectKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphError {
    ForwardReference { layer: usize, input: usize },
    ArityMismatch { layer: usize, expected: usize, got: usize },
    ChannelMismatch { layer: usize, expected: usize, got: usize },
    SpatialMismatch { layer: usize },
    BadOutputDim { layer: usize },
    NoInput,
    NoHeads,
    MultipleInputs,
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::ForwardReference { layer, input } => {
                write!(f, "layer {layer} references later layer {input}")
            }
            GraphError::ArityMismatch { layer, expected, got } => {
                write!(f, "layer {layer}: expected {expected} inputs, got {got}")
            }
            GraphError::ChannelMismatch { layer, expected, got } => {
                write!(f, "layer {layer}: expected {expected} input channels, got {got}")
            }
            GraphError::SpatialMismatch { layer } => {
                write!(f, "layer {layer}: input spatial dims disagree")
            }
            GraphError::BadOutputDim { layer } => {
                write!(f, "layer {layer}: output dimension < 1")
            }
            GraphError::NoInput => write!(f, "graph has no input layer"),
            GraphError::NoHeads => write!(f, "graph has no detection heads"),
            GraphError::MultipleInputs => write!(f, "graph must have exactly one input layer"),
        }
    }
}

impl GraphSpec {
    /// Re-derive every layer's output shape from its inputs and check it
    /// against the recorded one. Returns the graph's total stride per head.
    pub fn validate(&self) -> Result<(), GraphError> {
        let mut input_count = 0;
        for (id, layer) in self.layers.iter().enumerate() {
            for &inp in &layer.inputs {
                if inp >= id {
                    return Err(GraphError::ForwardReference { layer: id, input: inp });
                }
            }
            let arity = match layer.kind {
                LayerKind::Input => 0,
                LayerKind::Concat => {
                    if layer.inputs.len() < 2 {
                        return Err(GraphError::ArityMismatch {
                            layer: id,
                            expected: 2,
                            got: layer.inputs.len(),
                        });
                    }
                    layer.inputs.len()
                }
                LayerKind::Add => 2,
                _ => 1,
            };
            if layer.inputs.len() != arity {
                return Err(GraphError::ArityMismatch {
                    layer: id,
                    expected: arity,
                    got: layer.inputs.len(),
                });
            }
            let derived = match &layer.kind {
                LayerKind::Input => {
                    input_count += 1;
                    layer.out
                }
                LayerKind::Conv(c) => {
                    let src = self.layers[layer.inputs[0]].out;
                    if src.c != c.cin {
                        return Err(GraphError::ChannelMismatch {
                            layer: id,
                            expected: c.cin,
                            got: src.c,
                        });
                    }
                    let h = out_dim(src.h, c.k, c.s, c.p)
                        .ok_or(GraphError::BadOutputDim { layer: id })?;
                    let w = out_dim(src.w, c.k, c.s, c.p)
                        .ok_or(GraphError::BadOutputDim { layer: id })?;
                    Chw { c: c.cout, h, w }
                }
                LayerKind::MaxPool { k, s, p } => {
                    let src = self.layers[layer.inputs[0]].out;
                    let h =
                        out_dim(src.h, *k, *s, *p).ok_or(GraphError::BadOutputDim { layer: id })?;
                    let w =
                        out_dim(src.w, *k, *s, *p).ok_or(GraphError::BadOutputDim { layer: id })?;
                    Chw { c: src.c, h, w }
                }
                LayerKind::Upsample { factor } => {
                    let src = self.layers[layer.inputs[0]].out;
                    Chw { c: src.c, h: src.h * factor, w: src.w * factor }
                }
                LayerKind::Concat => {
                    let first = self.layers[layer.inputs[0]].out;
                    let mut c = 0;
                    for &inp in &layer.inputs {
                        let s = self.layers[inp].out;
                        if s.h != first.h || s.w != first.w {
                            return Err(GraphError::SpatialMismatch { layer: id });
                        }
                        c += s.c;
                    }
                    Chw { c, h: first.h, w: first.w }
                }
                LayerKind::Add => {
                    let a = self.layers[layer.inputs[0]].out;
                    let b = self.layers[layer.inputs[1]].out;
                    if a != b {
                        return Err(GraphError::SpatialMismatch { layer: id });
                    }
                    a
                }
            };
            if derived != layer.out {
                return Err(GraphError::SpatialMismatch { layer: id });
            }
        }
        match input_count {
            0 => return Err(GraphError::NoInput),
            1 => {}
            _ => return Err(GraphError::MultipleInputs),
        }
        if self.heads.is_empty() {
            return Err(GraphError::NoHeads);
        }
        Ok(())
    }

    /// Exact parameter count: each conv contributes k²·Cin·Cout + Cout.
    pub fn count_params(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| match &l.kind {
                LayerKind::Conv(c) => c.params(),
                _ => 0,
            })
            .sum()
    }

    /// Exact MAC count: each conv contributes k²·Cin·Cout·Hout·Wout;
    /// pooling, upsampling, and concatenation contribute zero.
    pub fn count_macs(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| match &l.kind {
                LayerKind::Conv(c) => {
                    (c.k * c.k * c.cin * c.cout) as u64 * (l.out.h * l.out.w) as u64
                }
                _ => 0,
            })
            .sum()
    }

    pub fn conv_ids(&self) -> Vec<LayerId> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l.kind, LayerKind::Conv(_)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Ids of layers nothing consumes and that are not heads (should be none).
    pub fn consumer_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0usize; self.layers.len()];
        for l in &self.layers {
            for &i in &l.inputs {
                counts[i] += 1;
            }
        }
        counts
    }
}

//! Post-training calibration: run the float graph over sample images,
//! accumulate per-tensor min/max, fit affine qparams, and quantize weights.
//!
//! Concatenation requires its inputs to share qparams, so the inputs of every
//! concat (followed through pooling/upsample layers, which pass codes and
//! qparams straight through) are placed in one range group and receive the
//! union of their observed ranges. This keeps concat a pure copy instead of
//! inserting requantization steps.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::forward::{run_f32_trace, run_int8_trace, ExecError, Observe};
use crate::graph::{GraphSpec, LayerId, LayerKind};
use crate::quant::{qparams_from_range, QParams};
use crate::tensor::FloatTensor;
use crate::weights::WeightStore;

/// Running min/max over every value a tensor slot has taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibStats {
    pub min: f32,
    pub max: f32,
    pub count: u64,
}

impl CalibStats {
    pub fn new() -> Self {
        CalibStats { min: f32::INFINITY, max: f32::NEG_INFINITY, count: 0 }
    }

    pub fn observe(&mut self, data: &[f32]) {
        for &v in data {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
        self.count += data.len() as u64;
    }

    /// Associative merge, so per-image stats may be computed independently.
    pub fn merge(&mut self, other: &CalibStats) {
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.count += other.count;
    }
}

impl Default for CalibStats {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CalibError {
    EmptyCalibrationSet,
    Exec(ExecError),
    NonFinite { layer: LayerId },
}

impl fmt::Display for CalibError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CalibError::EmptyCalibrationSet => write!(f, "calibration needs at least one image"),
            CalibError::Exec(e) => write!(f, "{e}"),
            CalibError::NonFinite { layer } => {
                write!(f, "layer {layer} produced non-finite values during calibration")
            }
        }
    }
}

impl From<ExecError> for CalibError {
    fn from(e: ExecError) -> Self {
        CalibError::Exec(e)
    }
}

/// One row of the calibration report: observed range and assigned qparams.
#[derive(Debug, Clone)]
pub struct TensorCalib {
    pub layer: LayerId,
    pub name: String,
    pub min: f32,
    pub max: f32,
    pub q: QParams,
}

struct RangeObserver {
    pre: Vec<CalibStats>,
    post: Vec<CalibStats>,
}

impl Observe for RangeObserver {
    fn pre_act(&mut self, layer: usize, data: &[f32]) {
        self.pre[layer].observe(data);
    }

    fn post(&mut self, layer: usize, data: &[f32]) {
        self.post[layer].observe(data);
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Layers that pass codes through unchanged share their source's qparams.
fn alias_targets(g: &GraphSpec) -> Vec<LayerId> {
    let mut alias: Vec<LayerId> = (0..g.layers.len()).collect();
    for (id, layer) in g.layers.iter().enumerate() {
        if matches!(layer.kind, LayerKind::MaxPool { .. } | LayerKind::Upsample { .. }) {
            alias[id] = alias[layer.inputs[0]];
        }
    }
    alias
}

/// Shared-range groups: every concat layer is fused with (the alias targets
/// of) all of its inputs.
fn range_groups(g: &GraphSpec) -> (Vec<LayerId>, UnionFind) {
    let alias = alias_targets(g);
    let mut uf = UnionFind::new(g.layers.len());
    for (id, layer) in g.layers.iter().enumerate() {
        if matches!(layer.kind, LayerKind::Concat) {
            for &inp in &layer.inputs {
                uf.union(alias[id], alias[inp]);
            }
        }
    }
    (alias, uf)
}

/// Calibrate activation ranges on `images`, assign qparams, and quantize
/// weights. Returns the per-tensor report sorted by layer id.
pub fn calibrate(
    g: &GraphSpec,
    store: &mut WeightStore,
    images: &[FloatTensor],
) -> Result<Vec<TensorCalib>, CalibError> {
    if images.is_empty() {
        return Err(CalibError::EmptyCalibrationSet);
    }
    let n = g.layers.len();
    let mut obs = RangeObserver { pre: vec![CalibStats::new(); n], post: vec![CalibStats::new(); n] };
    for img in images {
        run_f32_trace(g, store, img, &mut obs)?;
    }
    for (id, st) in obs.post.iter().enumerate() {
        if !st.min.is_finite() || !st.max.is_finite() {
            return Err(CalibError::NonFinite { layer: id });
        }
    }

    let (alias, mut uf) = range_groups(g);
    let mut group_min = vec![f32::INFINITY; n];
    let mut group_max = vec![f32::NEG_INFINITY; n];
    for id in 0..n {
        let root = uf.find(alias[id]);
        group_min[root] = group_min[root].min(obs.post[id].min);
        group_max[root] = group_max[root].max(obs.post[id].max);
    }

    let mut report = Vec::with_capacity(n);
    for id in 0..n {
        let root = uf.find(alias[id]);
        let q = qparams_from_range(group_min[root], group_max[root]);
        store.act_q[id] = q;
        if let LayerKind::Conv(c) = &g.layers[id].kind {
            if c.act.is_some() {
                let pre = &obs.pre[id];
                if !pre.min.is_finite() || !pre.max.is_finite() {
                    return Err(CalibError::NonFinite { layer: id });
                }
                store.pre_act_q[id] = Some(qparams_from_range(pre.min, pre.max));
            }
        }
        report.push(TensorCalib {
            layer: id,
            name: g.layers[id].name.clone(),
            min: obs.post[id].min,
            max: obs.post[id].max,
            q,
        });
    }

    store.quantize_weights(g).map_err(ExecError::Weight)?;
    Ok(report)
}

/// Per-tensor quantization error between the float and int8 paths.
#[derive(Debug, Clone)]
pub struct TensorError {
    pub layer: LayerId,
    pub name: String,
    pub max_abs: f32,
    pub rmse: f32,
}

/// Compare float forward against dequantized int8 forward over `images`.
/// Requires a calibrated, quantized store.
pub fn quant_error(
    g: &GraphSpec,
    store: &WeightStore,
    images: &[FloatTensor],
) -> Result<Vec<TensorError>, CalibError> {
    if images.is_empty() {
        return Err(CalibError::EmptyCalibrationSet);
    }
    let n = g.layers.len();
    let mut max_abs = vec![0f32; n];
    let mut sumsq = vec![0f64; n];
    let mut counts = vec![0u64; n];
    for img in images {
        let ftrace = run_f32_trace(g, store, img, &mut crate::forward::NoObserve)?;
        let qin = img.quantize(store.act_q[0]).map_err(|_| CalibError::NonFinite { layer: 0 })?;
        let qtrace = run_int8_trace(g, store, &qin)?;
        for id in 0..n {
            let fq = qtrace[id].dequantize();
            for (a, b) in ftrace[id].data.iter().zip(fq.data.iter()) {
                let d = (a - b).abs();
                max_abs[id] = max_abs[id].max(d);
                sumsq[id] += (d as f64) * (d as f64);
            }
            counts[id] += ftrace[id].data.len() as u64;
        }
    }
    Ok((0..n)
        .map(|id| TensorError {
            layer: id,
            name: g.layers[id].name.clone(),
            max_abs: max_abs[id],
            rmse: libm::sqrt(sumsq[id] / counts[id] as f64) as f32,
        })
        .collect())
}

//! Graph execution: the int8 path the runtime ships, and the float path used
//! for calibration and as a numeric oracle. Layers run in graph order (which
//! is topological by construction); both paths are deterministic.

use alloc::vec::Vec;
use core::fmt;

use crate::graph::{GraphSpec, LayerKind};
use crate::kernels::{
    act_f32, act_q, add_f32, add_q, concat_channels, concat_channels_f32, conv2d_codes, conv2d_f32,
    maxpool2d, maxpool2d_f32, upsample_nearest, upsample_nearest_f32, KernelError,
};
use crate::plan::TileSchedule;
use crate::quant::requant_multiplier;
use crate::tensor::{FloatTensor, QuantTensor, Shape};
use crate::weights::{WeightError, WeightStore};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecError {
    Weight(WeightError),
    Kernel(KernelError),
    InputShape { expected: (usize, usize, usize), got: (usize, usize, usize) },
    InputQParams,
    MissingPlan { layer: usize },
}

impl fmt::Display for ExecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecError::Weight(e) => write!(f, "{e}"),
            ExecError::Kernel(e) => write!(f, "{e}"),
            ExecError::InputShape { expected, got } => write!(
                f,
                "input shape {}x{}x{} does not match graph input {}x{}x{}",
                got.0, got.1, got.2, expected.0, expected.1, expected.2
            ),
            ExecError::InputQParams => {
                write!(f, "input tensor qparams differ from the model's input qparams")
            }
            ExecError::MissingPlan { layer } => {
                write!(f, "schedule has no plan for layer {layer}")
            }
        }
    }
}

impl From<WeightError> for ExecError {
    fn from(e: WeightError) -> Self {
        ExecError::Weight(e)
    }
}

impl From<KernelError> for ExecError {
    fn from(e: KernelError) -> Self {
        ExecError::Kernel(e)
    }
}

fn check_input(g: &GraphSpec, shape: Shape) -> Result<(), ExecError> {
    let want = g.layers[0].out;
    if (shape.c, shape.h, shape.w) != (want.c, want.h, want.w) || shape.n != 1 {
        return Err(ExecError::InputShape {
            expected: (want.c, want.h, want.w),
            got: (shape.c, shape.h, shape.w),
        });
    }
    Ok(())
}

/// Execute the int8 graph, returning every layer's output tensor.
pub fn run_int8_trace(
    g: &GraphSpec,
    store: &WeightStore,
    input: &QuantTensor,
) -> Result<Vec<QuantTensor>, ExecError> {
    check_input(g, input.shape)?;
    if input.q != store.act_q[0] {
        return Err(ExecError::InputQParams);
    }
    let mut outs: Vec<Option<QuantTensor>> = Vec::with_capacity(g.layers.len());
    for (id, layer) in g.layers.iter().enumerate() {
        let t = match &layer.kind {
            LayerKind::Input => input.clone(),
            LayerKind::Conv(c) => {
                let src = outs[layer.inputs[0]].as_ref().unwrap();
                let q = store.quant_conv(id)?;
                let raw_q = match c.act {
                    Some(_) => store.pre_act_q[id].expect("conv with activation has raw qparams"),
                    None => store.act_q[id],
                };
                let m = requant_multiplier(src.q.scale, q.w_scale, raw_q.scale);
                let data = conv2d_codes(
                    &src.data,
                    (src.shape.c, src.shape.h, src.shape.w),
                    src.q.zero_point,
                    &q.w_q,
                    0,
                    &q.b_q,
                    c.cout,
                    (c.k, c.k),
                    (c.s, c.s),
                    (c.p, c.p),
                    m,
                    raw_q.zero_point,
                );
                let raw = QuantTensor::new(
                    Shape::new(1, c.cout, layer.out.h, layer.out.w),
                    data,
                    raw_q,
                );
                match c.act {
                    Some(kind) => act_q(&raw, kind, store.act_q[id]),
                    None => raw,
                }
            }
            LayerKind::MaxPool { k, s, p } => {
                let src = outs[layer.inputs[0]].as_ref().unwrap();
                maxpool2d(src, (*k, *k), (*s, *s), (*p, *p))?
            }
            LayerKind::Upsample { factor } => {
                let src = outs[layer.inputs[0]].as_ref().unwrap();
                upsample_nearest(src, *factor)
            }
            LayerKind::Concat => {
                let parts: Vec<&QuantTensor> =
                    layer.inputs.iter().map(|&i| outs[i].as_ref().unwrap()).collect();
                concat_channels(&parts)?
            }
            LayerKind::Add => {
                let a = outs[layer.inputs[0]].as_ref().unwrap();
                let b = outs[layer.inputs[1]].as_ref().unwrap();
                add_q(a, b, store.act_q[id])?
            }
        };
        outs.push(Some(t));
    }
    Ok(outs.into_iter().map(|t| t.unwrap()).collect())
}

/// Execute the int8 graph and return one tensor per detection scale.
pub fn run_int8(
    g: &GraphSpec,
    store: &WeightStore,
    input: &QuantTensor,
) -> Result<Vec<QuantTensor>, ExecError> {
    let trace = run_int8_trace(g, store, input)?;
    Ok(g.heads.iter().map(|h| trace[h.layer].clone()).collect())
}

/// Gather a channel/row/col window of `src` into a dense slab, filling
/// out-of-bounds cells with `pad`. Row/col origins may be negative, which is
/// how convolution padding gets materialized for a tile.
fn gather_slab(
    src: &QuantTensor,
    c0: usize,
    c: usize,
    r0: isize,
    rows: usize,
    s0: isize,
    cols: usize,
    pad: i8,
) -> Vec<i8> {
    let (sh, sw) = (src.shape.h as isize, src.shape.w as isize);
    let mut slab = Vec::with_capacity(c * rows * cols);
    for ch in c0..c0 + c {
        for dy in 0..rows as isize {
            let y = r0 + dy;
            if y < 0 || y >= sh {
                slab.extend(core::iter::repeat(pad).take(cols));
                continue;
            }
            for dx in 0..cols as isize {
                let x = s0 + dx;
                if x < 0 || x >= sw {
                    slab.push(pad);
                } else {
                    slab.push(src.data[src.shape.index(0, ch, y as usize, x as usize)]);
                }
            }
        }
    }
    slab
}

/// Copy a (c, h, w) block into `dst` at (c0, y0, x0).
fn scatter(dst: &mut QuantTensor, block: &[i8], c0: usize, y0: usize, x0: usize, c: usize, h: usize, w: usize) {
    for ch in 0..c {
        for dy in 0..h {
            let row = (ch * h + dy) * w;
            let base = dst.shape.index(0, c0 + ch, y0 + dy, x0);
            dst.data[base..base + w].copy_from_slice(&block[row..row + w]);
        }
    }
}

/// Execute the int8 graph tile by tile according to `sched`. Every layer's
/// output is assembled from per-tile gather/compute/scatter passes; the head
/// outputs are bit-identical to the untiled path because int8 arithmetic is
/// exact and tiles read the same padded neighborhoods.
pub fn run_int8_tiled(
    g: &GraphSpec,
    store: &WeightStore,
    input: &QuantTensor,
    sched: &TileSchedule,
) -> Result<Vec<QuantTensor>, ExecError> {
    check_input(g, input.shape)?;
    if input.q != store.act_q[0] {
        return Err(ExecError::InputQParams);
    }
    let mut outs: Vec<QuantTensor> = Vec::with_capacity(g.layers.len());
    for (id, layer) in g.layers.iter().enumerate() {
        if matches!(layer.kind, LayerKind::Input) {
            outs.push(input.clone());
            continue;
        }
        let lp = sched.plan_for(id).ok_or(ExecError::MissingPlan { layer: id })?;
        let shape = Shape::new(1, layer.out.c, layer.out.h, layer.out.w);
        let out = match &layer.kind {
            LayerKind::Conv(c) => {
                let src = &outs[layer.inputs[0]];
                let q = store.quant_conv(id)?;
                let raw_q = match c.act {
                    Some(_) => store.pre_act_q[id].expect("conv with activation has raw qparams"),
                    None => store.act_q[id],
                };
                let lut = c.act.map(|kind| crate::quant::build_act_lut(raw_q, store.act_q[id], kind));
                let final_q = if c.act.is_some() { store.act_q[id] } else { raw_q };
                let mut out = QuantTensor::filled(shape, final_q.zero_point, final_q);
                let m = requant_multiplier(src.q.scale, q.w_scale, raw_q.scale);
                let wrow = c.cin * c.k * c.k;
                for t in &lp.tiles {
                    let rows = (t.h - 1) * c.s + c.k;
                    let cols = (t.w - 1) * c.s + c.k;
                    let r0 = (t.y0 * c.s) as isize - c.p as isize;
                    let s0 = (t.x0 * c.s) as isize - c.p as isize;
                    let slab =
                        gather_slab(src, 0, c.cin, r0, rows, s0, cols, src.q.zero_point);
                    let mut block = conv2d_codes(
                        &slab,
                        (c.cin, rows, cols),
                        src.q.zero_point,
                        &q.w_q[t.c0 * wrow..(t.c0 + t.c) * wrow],
                        0,
                        &q.b_q[t.c0..t.c0 + t.c],
                        t.c,
                        (c.k, c.k),
                        (c.s, c.s),
                        (0, 0),
                        m,
                        raw_q.zero_point,
                    );
                    if let Some(lut) = &lut {
                        for v in block.iter_mut() {
                            *v = crate::quant::lut_apply(*v, lut);
                        }
                    }
                    scatter(&mut out, &block, t.c0, t.y0, t.x0, t.c, t.h, t.w);
                }
                out
            }
            LayerKind::MaxPool { k, s, p } => {
                let src = &outs[layer.inputs[0]];
                let mut out = QuantTensor::filled(shape, src.q.zero_point, src.q);
                for t in &lp.tiles {
                    let rows = (t.h - 1) * s + k;
                    let cols = (t.w - 1) * s + k;
                    let r0 = (t.y0 * s) as isize - *p as isize;
                    let s0 = (t.x0 * s) as isize - *p as isize;
                    // i8::MIN padding never wins a max against real data, so
                    // borders behave exactly like the untiled skip-outside rule.
                    let slab = gather_slab(src, t.c0, t.c, r0, rows, s0, cols, i8::MIN);
                    let slab_t =
                        QuantTensor::new(Shape::new(1, t.c, rows, cols), slab, src.q);
                    let pooled = maxpool2d(&slab_t, (*k, *k), (*s, *s), (0, 0))?;
                    scatter(&mut out, &pooled.data, t.c0, t.y0, t.x0, t.c, t.h, t.w);
                }
                out
            }
            LayerKind::Upsample { factor } => {
                let src = &outs[layer.inputs[0]];
                let mut out = QuantTensor::filled(shape, src.q.zero_point, src.q);
                for t in &lp.tiles {
                    for ch in t.c0..t.c0 + t.c {
                        for y in t.y0..t.y0 + t.h {
                            for x in t.x0..t.x0 + t.w {
                                let v = src.data[src.shape.index(0, ch, y / factor, x / factor)];
                                let i = out.shape.index(0, ch, y, x);
                                out.data[i] = v;
                            }
                        }
                    }
                }
                out
            }
            LayerKind::Concat => {
                let parts: Vec<&QuantTensor> =
                    layer.inputs.iter().map(|&i| &outs[i]).collect();
                for w in &parts[1..] {
                    if w.q != parts[0].q {
                        return Err(ExecError::Kernel(KernelError::QParamsMismatch));
                    }
                }
                let mut out = QuantTensor::filled(shape, parts[0].q.zero_point, parts[0].q);
                for t in &lp.tiles {
                    for ch in t.c0..t.c0 + t.c {
                        // locate the part this output channel copies from
                        let (mut part, mut local) = (0usize, ch);
                        while local >= parts[part].shape.c {
                            local -= parts[part].shape.c;
                            part += 1;
                        }
                        let srcp = parts[part];
                        for y in t.y0..t.y0 + t.h {
                            let si = srcp.shape.index(0, local, y, t.x0);
                            let di = out.shape.index(0, ch, y, t.x0);
                            out.data[di..di + t.w]
                                .copy_from_slice(&srcp.data[si..si + t.w]);
                        }
                    }
                }
                out
            }
            LayerKind::Add => {
                let a = &outs[layer.inputs[0]];
                let b = &outs[layer.inputs[1]];
                let out_q = store.act_q[id];
                let mut out = QuantTensor::filled(shape, out_q.zero_point, out_q);
                for t in &lp.tiles {
                    let slab_a = gather_slab(a, t.c0, t.c, t.y0 as isize, t.h, t.x0 as isize, t.w, 0);
                    let slab_b = gather_slab(b, t.c0, t.c, t.y0 as isize, t.h, t.x0 as isize, t.w, 0);
                    let ts = Shape::new(1, t.c, t.h, t.w);
                    let summed = add_q(
                        &QuantTensor::new(ts, slab_a, a.q),
                        &QuantTensor::new(ts, slab_b, b.q),
                        out_q,
                    )?;
                    scatter(&mut out, &summed.data, t.c0, t.y0, t.x0, t.c, t.h, t.w);
                }
                out
            }
            LayerKind::Input => unreachable!("handled above"),
        };
        outs.push(out);
    }
    Ok(g.heads.iter().map(|h| outs[h.layer].clone()).collect())
}

/// Per-layer observation hook for the float path: conv-raw values (before the
/// activation) and each layer's final output.
pub trait Observe {
    fn pre_act(&mut self, layer: usize, data: &[f32]);
    fn post(&mut self, layer: usize, data: &[f32]);
}

/// No-op observer.
pub struct NoObserve;

impl Observe for NoObserve {
    fn pre_act(&mut self, _: usize, _: &[f32]) {}
    fn post(&mut self, _: usize, _: &[f32]) {}
}

/// Execute the float graph from master weights, returning every layer output.
pub fn run_f32_trace(
    g: &GraphSpec,
    store: &WeightStore,
    input: &FloatTensor,
    obs: &mut dyn Observe,
) -> Result<Vec<FloatTensor>, ExecError> {
    check_input(g, input.shape)?;
    store.validate_masters(g)?;
    let mut outs: Vec<FloatTensor> = Vec::with_capacity(g.layers.len());
    for (id, layer) in g.layers.iter().enumerate() {
        let t = match &layer.kind {
            LayerKind::Input => input.clone(),
            LayerKind::Conv(c) => {
                let src = &outs[layer.inputs[0]];
                let m = store.master[id].as_ref().unwrap();
                let raw =
                    conv2d_f32(src, &m.w, &m.b, c.cout, (c.k, c.k), (c.s, c.s), (c.p, c.p));
                match c.act {
                    Some(kind) => {
                        obs.pre_act(id, &raw.data);
                        act_f32(&raw, kind)
                    }
                    None => raw,
                }
            }
            LayerKind::MaxPool { k, s, p } => {
                maxpool2d_f32(&outs[layer.inputs[0]], (*k, *k), (*s, *s), (*p, *p))
            }
            LayerKind::Upsample { factor } => {
                upsample_nearest_f32(&outs[layer.inputs[0]], *factor)
            }
            LayerKind::Concat => {
                let parts: Vec<&FloatTensor> = layer.inputs.iter().map(|&i| &outs[i]).collect();
                concat_channels_f32(&parts)
            }
            LayerKind::Add => add_f32(&outs[layer.inputs[0]], &outs[layer.inputs[1]]),
        };
        obs.post(id, &t.data);
        outs.push(t);
    }
    Ok(outs)
}

/// Float head outputs.
pub fn run_f32(
    g: &GraphSpec,
    store: &WeightStore,
    input: &FloatTensor,
) -> Result<Vec<FloatTensor>, ExecError> {
    let trace = run_f32_trace(g, store, input, &mut NoObserve)?;
    Ok(g.heads.iter().map(|h| trace[h.layer].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::build::build_graph;
    use crate::graph::{SizeVariant, Version};
    use crate::tensor::Shape;
    use alloc::vec;

    fn small_graph() -> GraphSpec {
        build_graph(Version::V1_3, SizeVariant::Small, 2, 64).unwrap()
    }

    fn quantized_store(g: &GraphSpec, seed: u64) -> WeightStore {
        let mut s = WeightStore::random_init(g, seed);
        s.quantize_weights(g).unwrap();
        s
    }

    fn input_for(g: &GraphSpec, store: &WeightStore) -> QuantTensor {
        let r = g.input_resolution;
        let vals: Vec<f32> =
            (0..3 * r * r).map(|i| ((i * 2654435761usize) % 256) as f32 / 255.0).collect();
        QuantTensor::from_f32(Shape::new(1, 3, r, r), &vals, store.act_q[0]).unwrap()
    }

    #[test]
    fn forward_produces_one_tensor_per_scale() {
        let g = small_graph();
        let store = quantized_store(&g, 3);
        let input = input_for(&g, &store);
        let heads = run_int8(&g, &store, &input).unwrap();
        assert_eq!(heads.len(), 2);
        for (h, meta) in heads.iter().zip(g.heads.iter()) {
            assert_eq!(h.shape.c, 4 + 2);
            assert_eq!(h.shape.h, g.input_resolution / meta.stride);
        }
    }

    #[test]
    fn forward_twice_is_bit_identical() {
        let g = small_graph();
        let store = quantized_store(&g, 9);
        let input = input_for(&g, &store);
        let a = run_int8(&g, &store, &input).unwrap();
        let b = run_int8(&g, &store, &input).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.data, y.data);
        }
    }

    #[test]
    fn zero_weights_give_constant_heads_at_zero_point() {
        let g = small_graph();
        let mut store = WeightStore::random_init(&g, 0);
        for id in g.conv_ids() {
            let m = store.master[id].as_ref().unwrap();
            let (wl, bl) = (m.w.len(), m.b.len());
            store.set_master(&g, id, vec![0.0; wl], vec![0.0; bl]).unwrap();
        }
        store.quantize_weights(&g).unwrap();
        let input = input_for(&g, &store);
        let heads = run_int8(&g, &store, &input).unwrap();
        for h in &heads {
            // head tensors are concat(box, cls) of two activation-free convs
            assert!(h.data.iter().all(|&v| v == h.q.zero_point));
        }
    }

    #[test]
    fn input_shape_mismatch_rejected() {
        let g = small_graph();
        let store = quantized_store(&g, 1);
        let bad = QuantTensor::filled(Shape::new(1, 3, 32, 32), 0, store.act_q[0]);
        assert!(matches!(
            run_int8(&g, &store, &bad),
            Err(ExecError::InputShape { .. })
        ));
    }

    #[test]
    fn missing_quantization_rejected() {
        let g = small_graph();
        let store = WeightStore::random_init(&g, 1); // not quantized
        let input = input_for(&g, &store);
        assert!(matches!(
            run_int8(&g, &store, &input),
            Err(ExecError::Weight(WeightError::NotQuantized { .. }))
        ));
    }

    #[test]
    fn tiled_execution_is_bit_exact_across_budgets() {
        use crate::plan::{plan_tiles, validate_schedule, MemBudget};
        for (v, sz) in [
            (Version::V1_3, SizeVariant::Small),
            (Version::V5, SizeVariant::Small),
            (Version::V8, SizeVariant::Small),
        ] {
            let g = build_graph(v, sz, 2, 64).unwrap();
            let store = quantized_store(&g, 21);
            let input = input_for(&g, &store);
            let reference = run_int8(&g, &store, &input).unwrap();
            for l1 in [512 * 1024u64, 24 * 1024, 6 * 1024] {
                let b = MemBudget::new(l1, 1 << 22, 1 << 26).unwrap();
                let sched = plan_tiles(&g, &b).unwrap();
                validate_schedule(&g, &sched).unwrap();
                let tiled = run_int8_tiled(&g, &store, &input, &sched).unwrap();
                assert_eq!(reference.len(), tiled.len());
                for (r, t) in reference.iter().zip(tiled.iter()) {
                    assert_eq!(r.q, t.q, "{} l1={l1}", g.version.as_str());
                    assert_eq!(r.data, t.data, "{} l1={l1}", g.version.as_str());
                }
            }
        }
    }
}

//! Static memory planner: tile each layer so its working set fits the L1
//! budget, and model data movement and cycle counts for the schedule.
//!
//! Tiling model:
//! - Output space is split into channel blocks x row stripes x column
//!   segments. The planner prefers full-channel, full-width row stripes
//!   (halo rows are cheap to reason about); only when a single output row
//!   does not fit does it also split width, and channels last.
//! - The working set of a tile is the input slab it reads (halo included,
//!   padding materialized), the weight block for its output channels, and
//!   the output tile itself. Double buffering doubles resident bytes.
//! - Splits are balanced: if the largest fitting stripe is h, the layer is
//!   cut into ceil(H/h) near-equal stripes. Equal stripes keep the cycle
//!   estimate monotone in the budget; a maximal-first split leaves a
//!   remainder tile whose exposed transfer time can make a *larger* budget
//!   slower.
//! - Halos are re-fetched per tile, never cached across tiles. Weights live
//!   in l2 and are staged to l1 per tile; the l3 -> l2 weight load happens
//!   once per layer.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::graph::{GraphSpec, LayerId, LayerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemBudget {
    pub l1_bytes: u64,
    pub l2_bytes: u64,
    pub l3_bytes: u64,
}

impl MemBudget {
    pub fn new(l1_bytes: u64, l2_bytes: u64, l3_bytes: u64) -> Result<Self, PlanError> {
        if l1_bytes == 0 || l1_bytes > l2_bytes || l2_bytes > l3_bytes {
            return Err(PlanError::BadBudget { l1_bytes, l2_bytes, l3_bytes });
        }
        Ok(MemBudget { l1_bytes, l2_bytes, l3_bytes })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanError {
    BadBudget { l1_bytes: u64, l2_bytes: u64, l3_bytes: u64 },
    InfeasibleBudget { layer: String },
    Invalid { layer: String, reason: &'static str },
}

impl fmt::Display for PlanError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanError::BadBudget { l1_bytes, l2_bytes, l3_bytes } => write!(
                f,
                "budget must satisfy 0 < l1 <= l2 <= l3, got l1={l1_bytes} l2={l2_bytes} l3={l3_bytes}"
            ),
            PlanError::InfeasibleBudget { layer } => {
                write!(f, "layer '{layer}': even a single output pixel exceeds the l1 budget")
            }
            PlanError::Invalid { layer, reason } => {
                write!(f, "schedule invalid at layer '{layer}': {reason}")
            }
        }
    }
}

/// One output-space tile: channels [c0, c0+c), rows [y0, y0+h), cols
/// [x0, x0+w), with its modeled traffic and work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub c0: usize,
    pub y0: usize,
    pub x0: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    /// l2 -> l1 input slab bytes (halo and materialized padding included).
    pub in_bytes: u64,
    /// l2 -> l1 weight + bias bytes for this channel block.
    pub weight_bytes: u64,
    /// l1 -> l2 output bytes.
    pub out_bytes: u64,
    pub macs: u64,
}

#[derive(Debug, Clone)]
pub struct LayerPlan {
    pub layer: LayerId,
    pub name: String,
    pub double_buffered: bool,
    /// Largest stripe dims actually used (c, h, w).
    pub tile_c: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub tiles: Vec<Tile>,
    /// One-off l3 -> l2 weight load for the whole layer.
    pub l3_weight_bytes: u64,
    /// Largest per-tile resident footprint including the double-buffer factor.
    pub max_resident_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct TileSchedule {
    pub budget: MemBudget,
    pub layers: Vec<LayerPlan>,
}

impl TileSchedule {
    pub fn total_macs(&self) -> u64 {
        self.layers.iter().flat_map(|l| l.tiles.iter()).map(|t| t.macs).sum()
    }

    pub fn plan_for(&self, layer: LayerId) -> Option<&LayerPlan> {
        self.layers.iter().find(|p| p.layer == layer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TransferTotals {
    pub l3_to_l2: u64,
    pub l2_to_l1: u64,
    pub l1_to_l2: u64,
}

impl TransferTotals {
    pub fn total(&self) -> u64 {
        self.l3_to_l2 + self.l2_to_l1 + self.l1_to_l2
    }
}

/// Per-stage average power in mW, indexed by pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StagePowerMw {
    pub init: f64,
    pub capture: f64,
    pub demosaic: f64,
    pub inference: f64,
    pub postprocess: f64,
    pub quiescent: f64,
}

impl StagePowerMw {
    pub fn get(&self, stage: crate::power::Stage) -> f64 {
        use crate::power::Stage;
        match stage {
            Stage::Init => self.init,
            Stage::Capture => self.capture,
            Stage::Demosaic => self.demosaic,
            Stage::Inference => self.inference,
            Stage::Postprocess => self.postprocess,
            Stage::Quiescent => self.quiescent,
        }
    }
}

/// Abstract machine the cycle model runs against. Bandwidths are bytes per
/// cycle for each memory level pair; the DVFS fields feed the sweep model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineModel {
    pub frequency_hz: f64,
    pub voltage_v: f64,
    pub macs_per_cycle_peak: f64,
    pub l3_l2_bytes_per_cycle: f64,
    pub l2_l1_bytes_per_cycle: f64,
    pub l1_l2_bytes_per_cycle: f64,
    /// Dynamic power coefficient, mW per (V^2 * MHz).
    pub c_dyn_mw_per_v2_mhz: f64,
    /// Leakage, mW per V.
    pub leak_mw_per_v: f64,
    pub stage_power_mw: StagePowerMw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleEstimate {
    pub total_cycles: u64,
    pub compute_cycles: u64,
    pub stall_cycles: u64,
    pub achieved_macs_per_cycle: f64,
}

/// Geometry of one layer as the planner sees it.
#[derive(Debug, Clone, Copy)]
enum TileCost {
    Conv { cin: usize, k: usize, s: usize },
    Pool { k: usize, s: usize },
    Upsample { factor: usize },
    Concat,
    Add,
}

impl TileCost {
    fn of(kind: &LayerKind) -> Option<TileCost> {
        match kind {
            LayerKind::Input => None,
            LayerKind::Conv(c) => Some(TileCost::Conv { cin: c.cin, k: c.k, s: c.s }),
            LayerKind::MaxPool { k, s, .. } => Some(TileCost::Pool { k: *k, s: *s }),
            LayerKind::Upsample { factor } => Some(TileCost::Upsample { factor: *factor }),
            LayerKind::Concat => Some(TileCost::Concat),
            LayerKind::Add => Some(TileCost::Add),
        }
    }

    /// Worst-case input slab rows (or cols) needed for `t` output rows.
    fn in_extent(&self, t: usize) -> usize {
        match self {
            TileCost::Conv { k, s, .. } | TileCost::Pool { k, s } => (t - 1) * s + k,
            TileCost::Upsample { factor } => (t + factor - 2) / factor + 1,
            TileCost::Concat | TileCost::Add => t,
        }
    }

    /// Input slab bytes for a tile of output dims (c, h, w).
    fn in_bytes(&self, c: usize, h: usize, w: usize) -> u64 {
        match self {
            TileCost::Conv { cin, .. } => {
                (*cin as u64) * (self.in_extent(h) as u64) * (self.in_extent(w) as u64)
            }
            TileCost::Pool { .. } | TileCost::Upsample { .. } => {
                (c as u64) * (self.in_extent(h) as u64) * (self.in_extent(w) as u64)
            }
            TileCost::Concat => (c * h * w) as u64,
            TileCost::Add => 2 * (c * h * w) as u64,
        }
    }

    /// Weight + bias bytes staged per tile for `c` output channels.
    fn weight_bytes(&self, c: usize) -> u64 {
        match self {
            TileCost::Conv { cin, k, .. } => (c * (cin * k * k) + 4 * c) as u64,
            _ => 0,
        }
    }

    fn macs(&self, c: usize, h: usize, w: usize) -> u64 {
        match self {
            TileCost::Conv { cin, k, .. } => (c * h * w) as u64 * (cin * k * k) as u64,
            _ => 0,
        }
    }

    fn working_set(&self, c: usize, h: usize, w: usize) -> u64 {
        self.in_bytes(c, h, w) + self.weight_bytes(c) + (c * h * w) as u64
    }
}

/// Largest v in [1, hi] with fits(v), or None if fits(1) is false.
/// `fits` must be monotone (true up to some point, then false).
fn max_fitting(hi: usize, fits: impl Fn(usize) -> bool) -> Option<usize> {
    if !fits(1) {
        return None;
    }
    let (mut lo, mut hi) = (1usize, hi);
    while lo < hi {
        let mid = lo + (hi - lo + 1) / 2;
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Some(lo)
}

/// Split `n` into ceil(n/max_part) near-equal parts, each <= max_part.
fn balanced_split(n: usize, max_part: usize) -> Vec<(usize, usize)> {
    let parts = n.div_ceil(max_part);
    let q = n / parts;
    let r = n % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for i in 0..parts {
        let len = if i < r { q + 1 } else { q };
        out.push((start, len));
        start += len;
    }
    out
}

/// Plan every non-input layer of `g` against the budget. Deterministic.
pub fn plan_tiles(g: &GraphSpec, b: &MemBudget) -> Result<TileSchedule, PlanError> {
    let mut layers = Vec::new();
    for (id, layer) in g.layers.iter().enumerate() {
        let Some(cost) = TileCost::of(&layer.kind) else { continue };
        let (co, ho, wo) = (layer.out.c, layer.out.h, layer.out.w);
        let ws_min = cost.working_set(1, 1, 1);
        let (double_buffered, tile_budget) = if 2 * ws_min <= b.l1_bytes {
            (true, b.l1_bytes / 2)
        } else if ws_min <= b.l1_bytes {
            (false, b.l1_bytes)
        } else {
            return Err(PlanError::InfeasibleBudget { layer: layer.name.clone() });
        };

        // Growth order: height first (full width and channels), then width,
        // then output-channel block.
        let (tc, th, tw) = if let Some(h) = max_fitting(ho, |h| cost.working_set(co, h, wo) <= tile_budget) {
            (co, h, wo)
        } else if let Some(w) = max_fitting(wo, |w| cost.working_set(co, 1, w) <= tile_budget) {
            (co, 1, w)
        } else {
            let c = max_fitting(co, |c| cost.working_set(c, 1, 1) <= tile_budget)
                .expect("minimal tile was checked against the budget");
            (c, 1, 1)
        };

        let mut tiles = Vec::new();
        let mut max_resident = 0u64;
        let factor = if double_buffered { 2 } else { 1 };
        for &(c0, c) in &balanced_split(co, tc) {
            for &(y0, h) in &balanced_split(ho, th) {
                for &(x0, w) in &balanced_split(wo, tw) {
                    let in_bytes = cost.in_bytes(c, h, w);
                    let weight_bytes = cost.weight_bytes(c);
                    let out_bytes = (c * h * w) as u64;
                    max_resident = max_resident.max(factor * (in_bytes + weight_bytes + out_bytes));
                    tiles.push(Tile {
                        c0,
                        y0,
                        x0,
                        c,
                        h,
                        w,
                        in_bytes,
                        weight_bytes,
                        out_bytes,
                        macs: cost.macs(c, h, w),
                    });
                }
            }
        }

        layers.push(LayerPlan {
            layer: id,
            name: layer.name.clone(),
            double_buffered,
            tile_c: tc,
            tile_h: th,
            tile_w: tw,
            tiles,
            l3_weight_bytes: cost.weight_bytes(co),
            max_resident_bytes: max_resident,
        });
    }
    Ok(TileSchedule { budget: *b, layers })
}

/// Exact byte totals per memory level pair, summed over the schedule.
pub fn simulate_transfers(s: &TileSchedule) -> TransferTotals {
    let mut t = TransferTotals::default();
    for lp in &s.layers {
        t.l3_to_l2 += lp.l3_weight_bytes;
        for tile in &lp.tiles {
            t.l2_to_l1 += tile.in_bytes + tile.weight_bytes;
            t.l1_to_l2 += tile.out_bytes;
        }
    }
    t
}

fn ceil_div_f(n: u64, per_cycle: f64) -> u64 {
    if n == 0 {
        return 0;
    }
    let c = libm::ceil(n as f64 / per_cycle);
    if c <= 0.0 {
        0
    } else {
        c as u64
    }
}

/// Cycle model: per tile, compute = ceil(macs / peak) and transfer =
/// ceil(bytes / bandwidth); a double-buffered tile costs max(compute,
/// transfer), otherwise the sum. The per-layer l3 -> l2 weight load is
/// serial. Stalls are whatever the total exceeds pure compute by.
pub fn estimate_cycles(s: &TileSchedule, m: &MachineModel) -> CycleEstimate {
    let mut total = 0u64;
    let mut compute = 0u64;
    let mut macs = 0u64;
    for lp in &s.layers {
        total += ceil_div_f(lp.l3_weight_bytes, m.l3_l2_bytes_per_cycle);
        for t in &lp.tiles {
            let c = ceil_div_f(t.macs, m.macs_per_cycle_peak);
            let xfer = ceil_div_f(t.in_bytes + t.weight_bytes, m.l2_l1_bytes_per_cycle)
                + ceil_div_f(t.out_bytes, m.l1_l2_bytes_per_cycle);
            total += if lp.double_buffered { c.max(xfer) } else { c + xfer };
            compute += c;
            macs += t.macs;
        }
    }
    CycleEstimate {
        total_cycles: total,
        compute_cycles: compute,
        stall_cycles: total - compute,
        achieved_macs_per_cycle: if total == 0 { 0.0 } else { macs as f64 / total as f64 },
    }
}

/// Independent check of a schedule: per-layer exact output coverage (no gap,
/// no overlap, verified by marking), per-tile byte accounting recomputed
/// from tile coordinates, and the budget bound on every tile's resident set.
pub fn validate_schedule(g: &GraphSpec, s: &TileSchedule) -> Result<(), PlanError> {
    let planned: Vec<LayerId> = s.layers.iter().map(|l| l.layer).collect();
    let expect: Vec<LayerId> = g
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| !matches!(l.kind, LayerKind::Input))
        .map(|(i, _)| i)
        .collect();
    if planned != expect {
        return Err(PlanError::Invalid {
            layer: String::new(),
            reason: "schedule does not cover exactly the non-input layers in order",
        });
    }
    for lp in &s.layers {
        let layer = &g.layers[lp.layer];
        let cost = TileCost::of(&layer.kind).expect("input layers were excluded above");
        let (co, ho, wo) = (layer.out.c, layer.out.h, layer.out.w);
        let fail = |reason| Err(PlanError::Invalid { layer: layer.name.clone(), reason });
        let factor = if lp.double_buffered { 2 } else { 1 };
        let mut mark = alloc::vec![false; co * ho * wo];
        for t in &lp.tiles {
            if t.c == 0 || t.h == 0 || t.w == 0 {
                return fail("empty tile");
            }
            if t.c0 + t.c > co || t.y0 + t.h > ho || t.x0 + t.w > wo {
                return fail("tile exceeds output bounds");
            }
            if t.in_bytes != cost.in_bytes(t.c, t.h, t.w)
                || t.weight_bytes != cost.weight_bytes(t.c)
                || t.out_bytes != (t.c * t.h * t.w) as u64
                || t.macs != cost.macs(t.c, t.h, t.w)
            {
                return fail("tile byte or mac accounting mismatch");
            }
            if factor * (t.in_bytes + t.weight_bytes + t.out_bytes) > s.budget.l1_bytes {
                return fail("tile working set exceeds l1 budget");
            }
            for c in t.c0..t.c0 + t.c {
                for y in t.y0..t.y0 + t.h {
                    for x in t.x0..t.x0 + t.w {
                        let i = (c * ho + y) * wo + x;
                        if mark[i] {
                            return fail("tiles overlap");
                        }
                        mark[i] = true;
                    }
                }
            }
        }
        if mark.iter().any(|&m| !m) {
            return fail("tiles leave output uncovered");
        }
        if lp.l3_weight_bytes != cost.weight_bytes(co) {
            return fail("layer weight bytes mismatch");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::build::build_graph;
    use crate::graph::{Chw, ConvSpec, GraphSpec, HeadScale, LayerSpec, SizeVariant, Version};
    use crate::quant::ActKind;
    use alloc::borrow::ToOwned;
    use alloc::vec;

    /// Input(cin,h,w) -> one conv, as a standalone graph.
    fn conv_graph(cin: usize, cout: usize, res: usize, k: usize, s: usize, p: usize) -> GraphSpec {
        let out = (res + 2 * p - k) / s + 1;
        GraphSpec {
            version: Version::V1_3,
            size: SizeVariant::Small,
            width_multiple: 1.0,
            depth_multiple: 1.0,
            num_classes: 1,
            input_resolution: res,
            layers: vec![
                LayerSpec {
                    name: "input".to_owned(),
                    kind: LayerKind::Input,
                    inputs: vec![],
                    out: Chw { c: cin, h: res, w: res },
                },
                LayerSpec {
                    name: "conv".to_owned(),
                    kind: LayerKind::Conv(ConvSpec {
                        cin,
                        cout,
                        k,
                        s,
                        p,
                        act: Some(ActKind::LeakyRelu),
                    }),
                    inputs: vec![0],
                    out: Chw { c: cout, h: out, w: out },
                },
            ],
            heads: vec![HeadScale { layer: 1, stride: 1 }],
            detect_kind: crate::graph::DetectKind::V8,
        }
    }

    fn budget(l1: u64) -> MemBudget {
        MemBudget::new(l1, 1 << 22, 1 << 26).unwrap()
    }

    #[test]
    fn budget_hierarchy_enforced() {
        assert!(MemBudget::new(0, 10, 10).is_err());
        assert!(MemBudget::new(20, 10, 30).is_err());
        assert!(MemBudget::new(10, 30, 20).is_err());
        assert!(MemBudget::new(10, 10, 10).is_ok());
    }

    #[test]
    fn full_fit_is_a_single_tile() {
        let g = conv_graph(4, 4, 8, 3, 1, 1);
        // ws = 4*10*10 + (4*36 + 16) + 4*8*8 = 400 + 160 + 256 = 816
        let s = plan_tiles(&g, &budget(1 << 20)).unwrap();
        assert_eq!(s.layers.len(), 1);
        assert_eq!(s.layers[0].tiles.len(), 1);
        assert!(s.layers[0].double_buffered);
        assert_eq!(s.layers[0].max_resident_bytes, 2 * 816);
        validate_schedule(&g, &s).unwrap();
    }

    #[test]
    fn half_budget_conv_splits_into_row_stripes_with_halo_refetch() {
        let g = conv_graph(16, 16, 32, 3, 1, 1);
        // Full working set: input 16*34*34 + weights 16*16*9 + bias 16*4
        // + output 16*32*32 = 18496 + 2304 + 64 + 16384 = 37248.
        let full_ws = 37_248u64;
        let b = budget(full_ws / 2); // 18624
        let s = plan_tiles(&g, &b).unwrap();
        validate_schedule(&g, &s).unwrap();
        let lp = &s.layers[0];
        // Minimal stripe doubles fit: ws(h=1) = 16*3*34 + 2368 + 512 = 4512,
        // so planning is double-buffered against 18624/2 = 9312.
        // ws(h) = 544*(h+2) + 2368 + 512*h = 1056h + 3456 <= 9312 -> h <= 5.
        assert!(lp.double_buffered);
        assert_eq!((lp.tile_c, lp.tile_h, lp.tile_w), (16, 5, 32));
        // Balanced split of 32 rows into ceil(32/5) = 7 stripes: 4x5 + 3x4.
        assert_eq!(lp.tiles.len(), 7);
        let heights: Vec<usize> = lp.tiles.iter().map(|t| t.h).collect();
        assert_eq!(heights, vec![5, 5, 5, 5, 4, 4, 4]);
        // Hand-derived traffic: each stripe re-fetches a 2-row halo, so the
        // input rows moved are 32 + 7*2 = 46 rows of 16ch x 34 padded cols.
        let t = simulate_transfers(&s);
        assert_eq!(t.l2_to_l1, 46 * 16 * 34 + 7 * 2368);
        assert_eq!(t.l1_to_l2, 16 * 32 * 32);
        assert_eq!(t.l3_to_l2, 2368);
    }

    #[test]
    fn planner_choice_matches_exhaustive_search_on_tiny_layers() {
        // Cases cover all three growth regimes: row stripes, width fallback,
        // channel fallback.
        for (cin, cout, res, k, s, p, l1) in [
            (8usize, 8usize, 16usize, 3usize, 1usize, 1usize, 6000u64),
            (3, 8, 16, 3, 1, 1, 900),
            (4, 16, 10, 1, 1, 0, 400),
            (8, 8, 12, 3, 2, 1, 700),
            (8, 4, 9, 5, 1, 2, 1500),
        ] {
            let g = conv_graph(cin, cout, res, k, s, p);
            let sched = plan_tiles(&g, &budget(l1)).unwrap();
            validate_schedule(&g, &sched).unwrap();
            let lp = &sched.layers[0];
            let out = &g.layers[1].out;
            let cost = TileCost::Conv { cin, k, s };
            let factor = if lp.double_buffered { 2 } else { 1 };
            let cap = budget(l1).l1_bytes / factor;
            assert!(cost.working_set(lp.tile_c, lp.tile_h, lp.tile_w) <= cap);
            // Brute-force the growth order: tallest full-width full-channel
            // stripe, else widest single-row full-channel segment, else the
            // deepest single-pixel channel block.
            let best_h = (1..=out.h).rev().find(|&h| cost.working_set(out.c, h, out.w) <= cap);
            let expect = if let Some(h) = best_h {
                (out.c, h, out.w)
            } else if let Some(w) =
                (1..=out.w).rev().find(|&w| cost.working_set(out.c, 1, w) <= cap)
            {
                (out.c, 1, w)
            } else {
                let c = (1..=out.c)
                    .rev()
                    .find(|&c| cost.working_set(c, 1, 1) <= cap)
                    .expect("plan_tiles succeeded, so a single pixel fits");
                (c, 1, 1)
            };
            assert_eq!((lp.tile_c, lp.tile_h, lp.tile_w), expect, "l1={l1}");
        }
    }

    #[test]
    fn single_pixel_overflow_is_infeasible_and_names_the_layer() {
        let g = conv_graph(16, 16, 32, 3, 1, 1);
        let err = plan_tiles(&g, &budget(64)).unwrap_err();
        assert_eq!(err, PlanError::InfeasibleBudget { layer: "conv".to_owned() });
    }

    #[test]
    fn halving_l1_never_reduces_transfer_bytes() {
        let g = build_graph(Version::V1_3, SizeVariant::Small, 2, 96).unwrap();
        let mut prev: Option<TransferTotals> = None;
        let mut l1 = 1u64 << 20;
        while l1 >= 4096 {
            let s = plan_tiles(&g, &budget(l1)).unwrap();
            validate_schedule(&g, &s).unwrap();
            let t = simulate_transfers(&s);
            if let Some(p) = prev {
                assert!(t.total() >= p.total(), "l1={l1}: {} < {}", t.total(), p.total());
                assert!(t.l2_to_l1 >= p.l2_to_l1);
            }
            assert_eq!(t.l1_to_l2 + t.l3_to_l2, expected_fixed_traffic(&g));
            prev = Some(t);
            l1 /= 2;
        }
    }

    /// Outputs are written once and layer weights loaded from l3 once, no
    /// matter the tiling.
    fn expected_fixed_traffic(g: &GraphSpec) -> u64 {
        let mut sum = 0u64;
        for l in &g.layers {
            match &l.kind {
                LayerKind::Input => {}
                LayerKind::Conv(c) => {
                    sum += (l.out.c * l.out.h * l.out.w) as u64;
                    sum += (c.weight_len() + 4 * c.cout) as u64;
                }
                _ => sum += (l.out.c * l.out.h * l.out.w) as u64,
            }
        }
        sum
    }

    #[test]
    fn achieved_rate_never_improves_as_l1_shrinks() {
        let g = build_graph(Version::V1_3, SizeVariant::Small, 2, 96).unwrap();
        let m = test_model();
        let mut prev = f64::INFINITY;
        let mut l1 = 1u64 << 20;
        while l1 >= 4096 {
            let s = plan_tiles(&g, &budget(l1)).unwrap();
            let e = estimate_cycles(&s, &m);
            assert!(
                e.achieved_macs_per_cycle <= prev + 1e-9,
                "l1={l1}: {} > {}",
                e.achieved_macs_per_cycle,
                prev
            );
            assert!(e.achieved_macs_per_cycle <= m.macs_per_cycle_peak);
            prev = e.achieved_macs_per_cycle;
            l1 /= 2;
        }
    }

    fn test_model() -> MachineModel {
        MachineModel {
            frequency_hz: 370.0e6,
            voltage_v: 0.8,
            macs_per_cycle_peak: 16.0,
            l3_l2_bytes_per_cycle: 4.0,
            l2_l1_bytes_per_cycle: 8.0,
            l1_l2_bytes_per_cycle: 8.0,
            c_dyn_mw_per_v2_mhz: 0.36,
            leak_mw_per_v: 11.0,
            stage_power_mw: StagePowerMw {
                init: 20.0,
                capture: 34.0,
                demosaic: 43.0,
                inference: 94.0,
                postprocess: 51.0,
                quiescent: 4.0,
            },
        }
    }

    #[test]
    fn free_transfers_hit_peak_on_divisible_work() {
        // 1x1 conv 1->8 over 4x4: macs = 128, a multiple of peak 16.
        let g = conv_graph(1, 8, 4, 1, 1, 0);
        let s = plan_tiles(&g, &budget(1 << 20)).unwrap();
        let mut m = test_model();
        m.l3_l2_bytes_per_cycle = f64::INFINITY;
        m.l2_l1_bytes_per_cycle = f64::INFINITY;
        m.l1_l2_bytes_per_cycle = f64::INFINITY;
        let e = estimate_cycles(&s, &m);
        assert_eq!(e.total_cycles, 8);
        assert_eq!(e.stall_cycles, 0);
        assert!((e.achieved_macs_per_cycle - m.macs_per_cycle_peak).abs() < 1e-12);
    }

    #[test]
    fn transfers_dominating_two_to_one_halve_the_rate() {
        let g = conv_graph(1, 8, 4, 1, 1, 0);
        let s = plan_tiles(&g, &budget(1 << 20)).unwrap();
        assert_eq!(s.layers[0].tiles.len(), 1);
        let t = &s.layers[0].tiles[0];
        assert!(s.layers[0].double_buffered);
        // compute = 128/16 = 8 cycles; choose bandwidths so the tile's
        // transfer side costs exactly 16 cycles and the l3 load is free.
        let mut m = test_model();
        m.l3_l2_bytes_per_cycle = f64::INFINITY;
        m.l2_l1_bytes_per_cycle = (t.in_bytes + t.weight_bytes) as f64 / 16.0;
        m.l1_l2_bytes_per_cycle = f64::INFINITY;
        let e = estimate_cycles(&s, &m);
        assert_eq!(e.total_cycles, 16);
        assert!((e.achieved_macs_per_cycle - m.macs_per_cycle_peak / 2.0).abs() < 1e-12);
    }

    #[test]
    fn transfer_totals_match_tile_bookkeeping() {
        let g = build_graph(Version::V8, SizeVariant::Small, 2, 64).unwrap();
        let s = plan_tiles(&g, &budget(32 * 1024)).unwrap();
        validate_schedule(&g, &s).unwrap();
        let t = simulate_transfers(&s);
        let mut by_hand = TransferTotals::default();
        for lp in &s.layers {
            by_hand.l3_to_l2 += lp.l3_weight_bytes;
            for tile in &lp.tiles {
                by_hand.l2_to_l1 += tile.in_bytes + tile.weight_bytes;
                by_hand.l1_to_l2 += tile.out_bytes;
            }
        }
        assert_eq!(t, by_hand);
        assert_eq!(s.total_macs(), g.count_macs() as u64);
    }

    #[test]
    fn validator_rejects_tampered_schedules() {
        let g = conv_graph(16, 16, 32, 3, 1, 1);
        let good = plan_tiles(&g, &budget(18_624)).unwrap();
        validate_schedule(&g, &good).unwrap();

        let mut overlap = good.clone();
        overlap.layers[0].tiles[1].y0 = 0;
        assert!(matches!(
            validate_schedule(&g, &overlap),
            Err(PlanError::Invalid { reason: "tiles overlap", .. })
        ));

        let mut gap = good.clone();
        gap.layers[0].tiles.pop();
        assert!(matches!(
            validate_schedule(&g, &gap),
            Err(PlanError::Invalid { reason: "tiles leave output uncovered", .. })
        ));

        let mut cooked = good.clone();
        cooked.layers[0].tiles[0].in_bytes = 1;
        assert!(matches!(
            validate_schedule(&g, &cooked),
            Err(PlanError::Invalid { reason: "tile byte or mac accounting mismatch", .. })
        ));

        let mut broke = good;
        broke.budget.l1_bytes = 256;
        assert!(matches!(
            validate_schedule(&g, &broke),
            Err(PlanError::Invalid { reason: "tile working set exceeds l1 budget", .. })
        ));
    }

    #[test]
    fn every_family_plans_clean_at_realistic_budgets() {
        for (v, sz) in [
            (Version::V1_3, SizeVariant::Small),
            (Version::V1_3, SizeVariant::Big),
            (Version::V5, SizeVariant::Small),
            (Version::V5, SizeVariant::Big),
            (Version::V8, SizeVariant::Small),
            (Version::V8, SizeVariant::Big),
            (Version::V10, SizeVariant::Small),
        ] {
            let g = build_graph(v, sz, 2, 96).unwrap();
            for l1 in [128 * 1024, 32 * 1024, 8 * 1024] {
                let s = plan_tiles(&g, &budget(l1)).unwrap();
                validate_schedule(&g, &s).unwrap();
            }
        }
    }

    #[test]
    fn width_then_channel_fallback_engages_on_starved_budgets() {
        // Full-width 1-row stripes need 16*3*66 + 2368 + 16*64 = 6560 bytes,
        // over the 6000/2 double-buffered cap, so width splits: ws(16,1,w) =
        // 48w + 96 + 2368 + 16w <= 3000 gives w = 8.
        let g = conv_graph(16, 16, 64, 3, 1, 1);
        let s = plan_tiles(&g, &budget(6000)).unwrap();
        validate_schedule(&g, &s).unwrap();
        let lp = &s.layers[0];
        assert_eq!((lp.tile_c, lp.tile_h, lp.tile_w), (16, 1, 8));
        // Starved further, even one full-channel pixel is too big
        // (144 + 2368 + 16 > 1536) and channels split: 144 + 149c <= 1536.
        let s2 = plan_tiles(&g, &budget(3072)).unwrap();
        validate_schedule(&g, &s2).unwrap();
        let lp2 = &s2.layers[0];
        assert_eq!((lp2.tile_c, lp2.tile_h, lp2.tile_w), (9, 1, 1));
    }
}

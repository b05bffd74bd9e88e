//! Builders for the network family: v1.3 small/big (plain conv/maxpool
//! backbone), v5 small/big (C3 blocks, lateral-conv neck), v8 small/big and
//! v10 (C2f blocks). All variants share one detect head layout with two
//! scales at strides 16 and 32, recorded in graph metadata.
//!
//! Channel widths come from base channels (64, 128, 256, 512, 1024) capped at
//! a per-variant `max_channels`, scaled by the width multiple, and rounded up
//! to the next multiple of 8. Block repeat counts scale by the depth multiple
//! with round-half-away-from-zero and a floor of 1.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::graph::{
    Chw, ConvSpec, DetectKind, GraphSpec, HeadScale, LayerId, LayerKind, LayerSpec, SizeVariant,
    Version,
};
use crate::quant::ActKind;

pub const TOTAL_STRIDE: usize = 32;
pub const HEAD_STRIDES: [usize; 2] = [16, 32];

/// Box-branch width of the detect head, fixed across variants.
const HEAD_BOX_CH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BuildError {
    ResolutionNotDivisible { resolution: usize, stride: usize },
    UnsupportedCombination { version: Version, size: SizeVariant },
    BadClassCount,
}

impl fmt::Display for BuildError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuildError::ResolutionNotDivisible { resolution, stride } => {
                write!(f, "input resolution {resolution} is not divisible by stride {stride}")
            }
            BuildError::UnsupportedCombination { version, size } => {
                write!(f, "unsupported combination: {} {}", version.as_str(), size.as_str())
            }
            BuildError::BadClassCount => write!(f, "num_classes must be >= 1"),
        }
    }
}

/// Round a scaled channel count up to the next multiple of 8 (minimum 8).
pub fn round_channels(x: f64) -> usize {
    let units = libm::ceil(x / 8.0) as usize;
    units.max(1) * 8
}

/// Depth-scaled repeat count: max(round(n·d), 1).
pub fn depth_gain(n: usize, d: f64) -> usize {
    let scaled = libm::round(n as f64 * d) as i64;
    scaled.max(1) as usize
}

struct Builder {
    layers: Vec<LayerSpec>,
    act: ActKind,
}

impl Builder {
    fn new(resolution: usize, act: ActKind) -> Self {
        let mut b = Builder { layers: Vec::new(), act };
        b.layers.push(LayerSpec {
            name: String::from("input"),
            kind: LayerKind::Input,
            inputs: vec![],
            out: Chw { c: 3, h: resolution, w: resolution },
        });
        b
    }

    fn out(&self, id: LayerId) -> Chw {
        self.layers[id].out
    }

    fn push(&mut self, name: String, kind: LayerKind, inputs: Vec<LayerId>, out: Chw) -> LayerId {
        self.layers.push(LayerSpec { name, kind, inputs, out });
        self.layers.len() - 1
    }

    fn conv(
        &mut self,
        name: &str,
        input: LayerId,
        cout: usize,
        k: usize,
        s: usize,
        act: Option<ActKind>,
    ) -> LayerId {
        let src = self.out(input);
        let p = k / 2;
        let spec = ConvSpec { cin: src.c, cout, k, s, p, act };
        let out = Chw { c: cout, h: (src.h + 2 * p - k) / s + 1, w: (src.w + 2 * p - k) / s + 1 };
        self.push(format!("{name}"), LayerKind::Conv(spec), vec![input], out)
    }

    fn conv_act(&mut self, name: &str, input: LayerId, cout: usize, k: usize, s: usize) -> LayerId {
        let act = Some(self.act);
        self.conv(name, input, cout, k, s, act)
    }

    fn maxpool(&mut self, name: &str, input: LayerId, k: usize, s: usize, p: usize) -> LayerId {
        let src = self.out(input);
        let out =
            Chw { c: src.c, h: (src.h + 2 * p - k) / s + 1, w: (src.w + 2 * p - k) / s + 1 };
        self.push(format!("{name}"), LayerKind::MaxPool { k, s, p }, vec![input], out)
    }

    fn upsample2(&mut self, name: &str, input: LayerId) -> LayerId {
        let src = self.out(input);
        let out = Chw { c: src.c, h: src.h * 2, w: src.w * 2 };
        self.push(format!("{name}"), LayerKind::Upsample { factor: 2 }, vec![input], out)
    }

    fn concat(&mut self, name: &str, inputs: Vec<LayerId>) -> LayerId {
        let first = self.out(inputs[0]);
        let c = inputs.iter().map(|&i| self.out(i).c).sum();
        let out = Chw { c, h: first.h, w: first.w };
        self.push(format!("{name}"), LayerKind::Concat, inputs, out)
    }

    fn add(&mut self, name: &str, a: LayerId, b: LayerId) -> LayerId {
        let out = self.out(a);
        self.push(format!("{name}"), LayerKind::Add, vec![a, b], out)
    }

    /// Cross-stage block with two 1x1 entry convolutions: one feeds a chain of
    /// bottlenecks (1x1 then 3x3), the other bypasses; both concatenate into a
    /// final 1x1 fusion conv.
    fn c3(&mut self, name: &str, input: LayerId, c2: usize, n: usize, shortcut: bool) -> LayerId {
        let h = c2 / 2;
        let cv1 = self.conv_act(&format!("{name}.cv1"), input, h, 1, 1);
        let cv2 = self.conv_act(&format!("{name}.cv2"), input, h, 1, 1);
        let mut y = cv1;
        for i in 0..n {
            let b1 = self.conv_act(&format!("{name}.m{i}.cv1"), y, h, 1, 1);
            let b2 = self.conv_act(&format!("{name}.m{i}.cv2"), b1, h, 3, 1);
            y = if shortcut { self.add(&format!("{name}.m{i}.add"), y, b2) } else { b2 };
        }
        let cat = self.concat(&format!("{name}.cat"), vec![y, cv2]);
        self.conv_act(&format!("{name}.cv3"), cat, c2, 1, 1)
    }

    /// Faster cross-stage block: the entry 1x1 expands to twice the hidden
    /// width (emitted as two half-width convolutions, equivalent to the
    /// expand-then-split form), bottlenecks (two 3x3) chain off the second
    /// half, and every intermediate is concatenated into the fusion 1x1.
    fn c2f(&mut self, name: &str, input: LayerId, c2: usize, n: usize, shortcut: bool) -> LayerId {
        let h = c2 / 2;
        let ya = self.conv_act(&format!("{name}.cv1a"), input, h, 1, 1);
        let yb = self.conv_act(&format!("{name}.cv1b"), input, h, 1, 1);
        let mut chunks = vec![ya, yb];
        let mut y = yb;
        for i in 0..n {
            let b1 = self.conv_act(&format!("{name}.m{i}.cv1"), y, h, 3, 1);
            let b2 = self.conv_act(&format!("{name}.m{i}.cv2"), b1, h, 3, 1);
            y = if shortcut { self.add(&format!("{name}.m{i}.add"), y, b2) } else { b2 };
            chunks.push(y);
        }
        let cat = self.concat(&format!("{name}.cat"), chunks);
        self.conv_act(&format!("{name}.cv2"), cat, c2, 1, 1)
    }

    /// Spatial pyramid pooling (fast): 1x1 squeeze, three chained 5x5 stride-1
    /// max pools, concat of all four, 1x1 fusion.
    fn sppf(&mut self, name: &str, input: LayerId, c2: usize) -> LayerId {
        let h = self.out(input).c / 2;
        let cv1 = self.conv_act(&format!("{name}.cv1"), input, h, 1, 1);
        let p1 = self.maxpool(&format!("{name}.pool1"), cv1, 5, 1, 2);
        let p2 = self.maxpool(&format!("{name}.pool2"), p1, 5, 1, 2);
        let p3 = self.maxpool(&format!("{name}.pool3"), p2, 5, 1, 2);
        let cat = self.concat(&format!("{name}.cat"), vec![cv1, p1, p2, p3]);
        self.conv_act(&format!("{name}.cv2"), cat, c2, 1, 1)
    }

    /// Detect head: per scale, a box branch (c -> 64 -> 64 -> 4) and a class
    /// branch (c -> cc -> cc -> nc) whose 4+nc outputs concatenate into one
    /// head tensor. Final 1x1 convs emit raw logits (no activation).
    fn detect(&mut self, scales: &[(LayerId, usize)], nc: usize) -> Vec<HeadScale> {
        let cc = self.out(scales[0].0).c.max(nc.min(100));
        let mut heads = Vec::new();
        for &(src, stride) in scales {
            let tag = format!("head.s{stride}");
            let b1 = self.conv_act(&format!("{tag}.box.cv1"), src, HEAD_BOX_CH, 3, 1);
            let b2 = self.conv_act(&format!("{tag}.box.cv2"), b1, HEAD_BOX_CH, 3, 1);
            let b3 = self.conv(&format!("{tag}.box.out"), b2, 4, 1, 1, None);
            let c1 = self.conv_act(&format!("{tag}.cls.cv1"), src, cc, 3, 1);
            let c2 = self.conv_act(&format!("{tag}.cls.cv2"), c1, cc, 3, 1);
            let c3 = self.conv(&format!("{tag}.cls.out"), c2, nc, 1, 1, None);
            let out = self.concat(&format!("{tag}.out"), vec![b3, c3]);
            heads.push(HeadScale { layer: out, stride });
        }
        heads
    }
}

/// Width/depth multiples and channel cap for one variant.
struct ScaleCfg {
    width: f64,
    depth: f64,
    max_channels: usize,
}

fn scale_cfg(version: Version, size: SizeVariant) -> Option<ScaleCfg> {
    match (version, size) {
        (Version::V5, SizeVariant::Small) => {
            Some(ScaleCfg { width: 0.10, depth: 0.33, max_channels: 1024 })
        }
        (Version::V5, SizeVariant::Big) => {
            Some(ScaleCfg { width: 0.15, depth: 0.33, max_channels: 640 })
        }
        (Version::V8, SizeVariant::Small) => {
            Some(ScaleCfg { width: 0.10, depth: 0.30, max_channels: 1024 })
        }
        (Version::V8, SizeVariant::Big) => {
            Some(ScaleCfg { width: 0.18, depth: 0.30, max_channels: 416 })
        }
        // v10 ships a single configuration
        (Version::V10, SizeVariant::Small) => {
            Some(ScaleCfg { width: 0.18, depth: 0.15, max_channels: 416 })
        }
        _ => None,
    }
}

/// Scaled channel ladder over base widths 64..1024.
fn channel_ladder(cfg: &ScaleCfg) -> [usize; 5] {
    let mut c = [0usize; 5];
    for (i, base) in [64usize, 128, 256, 512, 1024].iter().enumerate() {
        let capped = (*base).min(cfg.max_channels);
        c[i] = round_channels(capped as f64 * cfg.width);
    }
    c
}

/// Plain backbone plan for a v1.3 variant: (pool-before?, conv channel pairs)
/// per stage. Widths are fixed per size.
fn v13_plan(size: SizeVariant) -> Vec<Vec<(usize, usize)>> {
    match size {
        SizeVariant::Small => vec![
            vec![(3, 16)],
            vec![(16, 24), (24, 24)],
            vec![(24, 32)],
            vec![(32, 48)],
            vec![(48, 48), (48, 48)],
            vec![(48, 104)],
        ],
        SizeVariant::Big => vec![
            vec![(3, 32)],
            vec![(32, 48), (48, 48)],
            vec![(48, 64)],
            vec![(64, 96)],
            vec![(96, 96)],
            vec![(96, 160)],
        ],
    }
}

pub fn build_graph(
    version: Version,
    size: SizeVariant,
    num_classes: usize,
    input_resolution: usize,
) -> Result<GraphSpec, BuildError> {
    build_graph_with_act(version, size, num_classes, input_resolution, ActKind::Silu)
}

pub fn build_graph_with_act(
    version: Version,
    size: SizeVariant,
    num_classes: usize,
    input_resolution: usize,
    act: ActKind,
) -> Result<GraphSpec, BuildError> {
    if num_classes < 1 {
        return Err(BuildError::BadClassCount);
    }
    if input_resolution == 0 || input_resolution % TOTAL_STRIDE != 0 {
        return Err(BuildError::ResolutionNotDivisible {
            resolution: input_resolution,
            stride: TOTAL_STRIDE,
        });
    }
    let g = match version {
        Version::V1_3 => build_v13(size, num_classes, input_resolution, act),
        Version::V5 => {
            let cfg = scale_cfg(version, size)
                .ok_or(BuildError::UnsupportedCombination { version, size })?;
            build_v5(&cfg, version, size, num_classes, input_resolution, act)
        }
        Version::V8 | Version::V10 => {
            let cfg = scale_cfg(version, size)
                .ok_or(BuildError::UnsupportedCombination { version, size })?;
            build_v8(&cfg, version, size, num_classes, input_resolution, act)
        }
    };
    debug_assert!(g.validate().is_ok());
    Ok(g)
}

fn build_v13(
    size: SizeVariant,
    nc: usize,
    resolution: usize,
    act: ActKind,
) -> GraphSpec {
    let mut b = Builder::new(resolution, act);
    let plan = v13_plan(size);
    let mut x = 0; // input layer
    let mut p4 = 0;
    for (stage, convs) in plan.iter().enumerate() {
        if stage > 0 {
            x = b.maxpool(&format!("b{stage}.pool"), x, 2, 2, 0);
        }
        for (i, &(cin, cout)) in convs.iter().enumerate() {
            debug_assert_eq!(b.out(x).c, cin);
            x = b.conv_act(&format!("b{stage}.conv{i}"), x, cout, 3, 1);
        }
        if stage == plan.len() - 2 {
            p4 = x;
        }
    }
    let heads = b.detect(&[(p4, HEAD_STRIDES[0]), (x, HEAD_STRIDES[1])], nc);
    GraphSpec {
        version: Version::V1_3,
        size,
        width_multiple: 1.0,
        depth_multiple: 1.0,
        num_classes: nc,
        input_resolution: resolution,
        layers: b.layers,
        heads,
        detect_kind: DetectKind::V8,
    }
}

fn build_v5(
    cfg: &ScaleCfg,
    version: Version,
    size: SizeVariant,
    nc: usize,
    resolution: usize,
    act: ActKind,
) -> GraphSpec {
    let c = channel_ladder(cfg);
    let d = cfg.depth;
    let mut b = Builder::new(resolution, act);
    let s1 = b.conv_act("stem", 0, c[0], 3, 2);
    let s2 = b.conv_act("b1.down", s1, c[1], 3, 2);
    let b1 = b.c3("b1.c3", s2, c[1], depth_gain(3, d), true);
    let s3 = b.conv_act("b2.down", b1, c[2], 3, 2);
    let b2 = b.c3("b2.c3", s3, c[2], depth_gain(6, d), true);
    let s4 = b.conv_act("b3.down", b2, c[3], 3, 2);
    let b3 = b.c3("b3.c3", s4, c[3], depth_gain(9, d), true);
    let s5 = b.conv_act("b4.down", b3, c[4], 3, 2);
    let b4 = b.c3("b4.c3", s5, c[4], depth_gain(3, d), true);
    let spp = b.sppf("b4.sppf", b4, c[4]);

    let lat = b.conv_act("neck.lateral", spp, c[3], 1, 1);
    let up = b.upsample2("neck.up", lat);
    let cat1 = b.concat("neck.cat1", vec![up, b3]);
    let p4 = b.c3("neck.p4", cat1, c[3], depth_gain(3, d), false);
    let dn = b.conv_act("neck.down", p4, c[3], 3, 2);
    let cat2 = b.concat("neck.cat2", vec![dn, lat]);
    let p5 = b.c3("neck.p5", cat2, c[4], depth_gain(3, d), false);

    let heads = b.detect(&[(p4, HEAD_STRIDES[0]), (p5, HEAD_STRIDES[1])], nc);
    GraphSpec {
        version,
        size,
        width_multiple: cfg.width,
        depth_multiple: cfg.depth,
        num_classes: nc,
        input_resolution: resolution,
        layers: b.layers,
        heads,
        detect_kind: DetectKind::V8,
    }
}

fn build_v8(
    cfg: &ScaleCfg,
    version: Version,
    size: SizeVariant,
    nc: usize,
    resolution: usize,
    act: ActKind,
) -> GraphSpec {
    let c = channel_ladder(cfg);
    let d = cfg.depth;
    let mut b = Builder::new(resolution, act);
    let s1 = b.conv_act("stem", 0, c[0], 3, 2);
    let s2 = b.conv_act("b1.down", s1, c[1], 3, 2);
    let b1 = b.c2f("b1.c2f", s2, c[1], depth_gain(3, d), true);
    let s3 = b.conv_act("b2.down", b1, c[2], 3, 2);
    let b2 = b.c2f("b2.c2f", s3, c[2], depth_gain(6, d), true);
    let s4 = b.conv_act("b3.down", b2, c[3], 3, 2);
    let b3 = b.c2f("b3.c2f", s4, c[3], depth_gain(6, d), true);
    let s5 = b.conv_act("b4.down", b3, c[4], 3, 2);
    let b4 = b.c2f("b4.c2f", s5, c[4], depth_gain(3, d), true);
    let spp = b.sppf("b4.sppf", b4, c[4]);

    let up = b.upsample2("neck.up", spp);
    let cat1 = b.concat("neck.cat1", vec![up, b3]);
    let p4 = b.c2f("neck.p4", cat1, c[3], depth_gain(3, d), false);
    let dn = b.conv_act("neck.down", p4, c[3], 3, 2);
    let cat2 = b.concat("neck.cat2", vec![dn, spp]);
    let p5 = b.c2f("neck.p5", cat2, c[4], depth_gain(3, d), false);

    let detect_kind = if version == Version::V10 { DetectKind::V10 } else { DetectKind::V8 };
    let heads = b.detect(&[(p4, HEAD_STRIDES[0]), (p5, HEAD_STRIDES[1])], nc);
    GraphSpec {
        version,
        size,
        width_multiple: cfg.width,
        depth_multiple: cfg.depth,
        num_classes: nc,
        input_resolution: resolution,
        layers: b.layers,
        heads,
        detect_kind,
    }
}

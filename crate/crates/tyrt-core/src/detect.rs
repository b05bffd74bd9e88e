//! Detection post-processing: decode head tensors into boxes, class-wise
//! greedy NMS (skipped for the NMS-free head), and a COCO-style mAP
//! evaluator over the 0.50:0.05:0.95 IoU thresholds.

use alloc::vec::Vec;
use core::fmt;

use crate::graph::{DetectKind, GraphSpec};
use crate::tensor::QuantTensor;

pub const DEFAULT_CONF_THRESHOLD: f32 = 0.25;
pub const DEFAULT_NMS_IOU: f64 = 0.45;
pub const HEAD_BOX_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class_id: usize,
    pub score: f32,
    /// (x1, y1, x2, y2) in input-image pixels; x1 <= x2, y1 <= y2.
    pub bbox: [f32; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtBox {
    pub class_id: usize,
    pub bbox: [f32; 4],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DetectError {
    HeadCount { expected: usize, got: usize },
    HeadLayout { scale: usize },
    EmptyEvalSet,
    EvalLengthMismatch { preds: usize, gts: usize },
}

impl fmt::Display for DetectError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetectError::HeadCount { expected, got } => {
                write!(f, "expected {expected} head tensors, got {got}")
            }
            DetectError::HeadLayout { scale } => {
                write!(f, "head tensor for scale {scale} does not match the grid layout")
            }
            DetectError::EmptyEvalSet => write!(f, "evaluation needs at least one image"),
            DetectError::EvalLengthMismatch { preds, gts } => {
                write!(f, "got predictions for {preds} images but ground truth for {gts}")
            }
        }
    }
}

/// Decode geometry: strides and class count of the head tensors, plus which
/// assignment style the head was built with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMeta {
    pub num_classes: usize,
    pub input_resolution: usize,
    pub strides: Vec<usize>,
    pub detect: DetectKind,
}

impl GridMeta {
    pub fn of(g: &GraphSpec) -> GridMeta {
        GridMeta {
            num_classes: g.num_classes,
            input_resolution: g.input_resolution,
            strides: g.heads.iter().map(|h| h.stride).collect(),
            detect: g.detect_kind,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Decode head tensors into detections. Per cell, channels are 4 box
/// distances (left, top, right, bottom in stride units, negatives clamped
/// to zero) followed by `num_classes` class logits. Class scores are
/// sigmoids of the logits; boxes grow around the cell center. The v8-style
/// head emits every class above the threshold; the NMS-free head emits at
/// most the argmax class per cell.
pub fn decode(
    heads: &[QuantTensor],
    meta: &GridMeta,
    conf_threshold: f32,
) -> Result<Vec<Detection>, DetectError> {
    if heads.len() != meta.strides.len() {
        return Err(DetectError::HeadCount { expected: meta.strides.len(), got: heads.len() });
    }
    let mut out = Vec::new();
    for (scale, (t, &stride)) in heads.iter().zip(meta.strides.iter()).enumerate() {
        let cells = meta.input_resolution / stride;
        let want_c = HEAD_BOX_CHANNELS + meta.num_classes;
        if t.shape.c != want_c || t.shape.h != cells || t.shape.w != cells || t.shape.n != 1 {
            return Err(DetectError::HeadLayout { scale });
        }
        let val = |c: usize, y: usize, x: usize| t.q.dequantize_value(t.data[t.shape.index(0, c, y, x)]);
        for gy in 0..cells {
            for gx in 0..cells {
                let cx = (gx as f32 + 0.5) * stride as f32;
                let cy = (gy as f32 + 0.5) * stride as f32;
                let dist = |c: usize| val(c, gy, gx).max(0.0) * stride as f32;
                let bbox = [
                    cx - dist(0),
                    cy - dist(1),
                    cx + dist(2),
                    cy + dist(3),
                ];
                match meta.detect {
                    DetectKind::V8 => {
                        for cls in 0..meta.num_classes {
                            let score =
                                sigmoid(val(HEAD_BOX_CHANNELS + cls, gy, gx) as f64) as f32;
                            if score >= conf_threshold {
                                out.push(Detection { class_id: cls, score, bbox });
                            }
                        }
                    }
                    DetectKind::V10 => {
                        let mut best = 0usize;
                        let mut best_logit = f32::NEG_INFINITY;
                        for cls in 0..meta.num_classes {
                            let logit = val(HEAD_BOX_CHANNELS + cls, gy, gx);
                            if logit > best_logit {
                                best_logit = logit;
                                best = cls;
                            }
                        }
                        let score = sigmoid(best_logit as f64) as f32;
                        if score >= conf_threshold {
                            out.push(Detection { class_id: best, score, bbox });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Intersection over union of two xyxy boxes; 0 for disjoint or degenerate
/// unions. Continuous-area convention.
pub fn iou(a: [f32; 4], b: [f32; 4]) -> f64 {
    let (ax1, ay1, ax2, ay2) = (a[0] as f64, a[1] as f64, a[2] as f64, a[3] as f64);
    let (bx1, by1, bx2, by2) = (b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Deterministic detection ordering: score descending, ties by lower
/// class id, then by position in the input list.
fn ranked(dets: &[Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .expect("detection scores are finite")
            .then(dets[a].class_id.cmp(&dets[b].class_id))
            .then(a.cmp(&b))
    });
    idx
}

/// Greedy class-wise NMS: walk detections in rank order and keep one iff its
/// IoU with every already-kept detection of the same class is below the
/// threshold.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for &i in &ranked(dets) {
        let d = &dets[i];
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(k.bbox, d.bbox) >= iou_threshold);
        if !suppressed {
            kept.push(d.clone());
        }
    }
    kept
}

/// The standard 0.50:0.05:0.95 threshold ladder.
pub fn iou_thresholds_50_95() -> [f64; 10] {
    core::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAp {
    pub class_id: usize,
    /// AP averaged over the threshold ladder.
    pub ap: f64,
    pub gt_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub map: f64,
    pub per_class: Vec<ClassAp>,
    /// mAP at each threshold, aligned with the input threshold list.
    pub per_threshold: Vec<f64>,
}

/// 101-point interpolated AP for one class at one IoU threshold.
/// `flat` lists (image, score, box) of this class, already rank-sorted.
fn ap_for_class(
    flat: &[(usize, f32, [f32; 4])],
    gt_boxes: &[Vec<[f32; 4]>],
    npos: usize,
    thr: f64,
) -> f64 {
    let mut matched: Vec<Vec<bool>> = gt_boxes.iter().map(|g| alloc::vec![false; g.len()]).collect();
    let mut tp = alloc::vec![false; flat.len()];
    for (k, &(img, _, bbox)) in flat.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gb) in gt_boxes[img].iter().enumerate() {
            if matched[img][gi] {
                continue;
            }
            let v = iou(bbox, *gb);
            if v >= thr && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, _)) = best {
            matched[img][gi] = true;
            tp[k] = true;
        }
    }
    // precision/recall curve and its monotone envelope from the right
    let mut cum_tp = 0usize;
    let mut prec = Vec::with_capacity(flat.len());
    let mut rec = Vec::with_capacity(flat.len());
    for (k, &is_tp) in tp.iter().enumerate() {
        if is_tp {
            cum_tp += 1;
        }
        prec.push(cum_tp as f64 / (k + 1) as f64);
        rec.push(cum_tp as f64 / npos as f64);
    }
    let mut env = prec.clone();
    for k in (0..env.len().saturating_sub(1)).rev() {
        env[k] = env[k].max(env[k + 1]);
    }
    let mut ap = 0.0;
    for r in 0..=100 {
        let want = r as f64 / 100.0;
        // first rank whose recall reaches the sample point
        let p = rec
            .iter()
            .position(|&rv| rv >= want)
            .map_or(0.0, |k| env[k]);
        ap += p;
    }
    ap / 101.0
}

/// COCO-style mAP: 101-point interpolated AP per class per IoU threshold,
/// averaged over thresholds and then over the classes present in the ground
/// truth. Images with no ground truth still count their predictions as false
/// positives.
pub fn eval_map(
    preds: &[Vec<Detection>],
    gts: &[Vec<GtBox>],
    thresholds: &[f64],
) -> Result<MapReport, DetectError> {
    if preds.is_empty() {
        return Err(DetectError::EmptyEvalSet);
    }
    if preds.len() != gts.len() {
        return Err(DetectError::EvalLengthMismatch { preds: preds.len(), gts: gts.len() });
    }
    let mut classes: Vec<usize> = gts.iter().flatten().map(|g| g.class_id).collect();
    classes.sort_unstable();
    classes.dedup();

    let mut per_class = Vec::with_capacity(classes.len());
    let mut per_thr_sum = alloc::vec![0.0f64; thresholds.len()];
    for &cls in &classes {
        let gt_boxes: Vec<Vec<[f32; 4]>> = gts
            .iter()
            .map(|g| g.iter().filter(|b| b.class_id == cls).map(|b| b.bbox).collect())
            .collect();
        let npos: usize = gt_boxes.iter().map(|g| g.len()).sum();
        let mut flat: Vec<(usize, f32, [f32; 4])> = Vec::new();
        for (img, dets) in preds.iter().enumerate() {
            for d in dets.iter().filter(|d| d.class_id == cls) {
                flat.push((img, d.score, d.bbox));
            }
        }
        flat.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("detection scores are finite")
                .then(a.0.cmp(&b.0))
        });
        let mut sum = 0.0;
        for (ti, &thr) in thresholds.iter().enumerate() {
            let ap = ap_for_class(&flat, &gt_boxes, npos, thr);
            per_thr_sum[ti] += ap;
            sum += ap;
        }
        per_class.push(ClassAp { class_id: cls, ap: sum / thresholds.len() as f64, gt_count: npos });
    }
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|c| c.ap).sum::<f64>() / per_class.len() as f64
    };
    let per_threshold: Vec<f64> = if classes.is_empty() {
        alloc::vec![0.0; thresholds.len()]
    } else {
        per_thr_sum.iter().map(|s| s / classes.len() as f64).collect()
    };
    Ok(MapReport { map, per_class, per_threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::QParams;
    use crate::tensor::Shape;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meta(nc: usize, detect: DetectKind) -> GridMeta {
        GridMeta { num_classes: nc, input_resolution: 64, strides: vec![16, 32], detect }
    }

    /// Heads where every channel holds the code for `fill` under scale 1/8.
    fn head_pair(nc: usize, fill: f32) -> (Vec<QuantTensor>, QParams) {
        let q = QParams::new(0.125, 0);
        let mk = |cells: usize| {
            let shape = Shape::new(1, 4 + nc, cells, cells);
            QuantTensor::filled(shape, q.quantize_value(fill), q)
        };
        (vec![mk(4), mk(2)], q)
    }

    #[test]
    fn strongly_negative_logits_decode_to_nothing() {
        let (heads, _) = head_pair(3, -10.0);
        let dets = decode(&heads, &meta(3, DetectKind::V8), 0.25).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn single_hot_cell_decodes_to_hand_computed_detection() {
        let nc = 3;
        let (mut heads, q) = head_pair(nc, -10.0);
        // scale 0 (stride 16), cell (gy=1, gx=2): class 1 logit 5.0, and all
        // four box distances exactly 1.0 stride.
        let t = &mut heads[0];
        let (gy, gx) = (1, 2);
        for c in 0..4 {
            let i = t.shape.index(0, c, gy, gx);
            t.data[i] = q.quantize_value(1.0);
        }
        let i = t.shape.index(0, 4 + 1, gy, gx);
        t.data[i] = q.quantize_value(5.0);
        let dets = decode(&heads, &meta(nc, DetectKind::V8), 0.25).unwrap();
        assert_eq!(dets.len(), 1);
        let d = &dets[0];
        assert_eq!(d.class_id, 1);
        // sigmoid(5) = 0.993307...
        assert!((d.score - 0.993_307_2).abs() < 1e-5);
        // center (2.5*16, 1.5*16) = (40, 24), each side one stride out
        assert_eq!(d.bbox, [40.0 - 16.0, 24.0 - 16.0, 40.0 + 16.0, 24.0 + 16.0]);
    }

    #[test]
    fn decode_is_deterministic() {
        let (mut heads, q) = head_pair(2, -10.0);
        let i = heads[1].shape.index(0, 4, 1, 1);
        heads[1].data[i] = q.quantize_value(3.0);
        let m = meta(2, DetectKind::V8);
        let a = decode(&heads, &m, 0.25).unwrap();
        let b = decode(&heads, &m, 0.25).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn negative_box_distances_clamp_to_empty_extent() {
        let (mut heads, q) = head_pair(1, -10.0);
        let i = heads[0].shape.index(0, 4, 0, 0);
        heads[0].data[i] = q.quantize_value(9.0);
        let dets = decode(&heads, &meta(1, DetectKind::V8), 0.25).unwrap();
        assert_eq!(dets.len(), 1);
        let b = dets[0].bbox;
        // all four distances were negative, so the box collapses to the center
        assert_eq!((b[0], b[1]), (b[2], b[3]));
        assert!(b[0] >= 0.0 && b[1] >= 0.0);
    }

    #[test]
    fn layout_mismatch_rejected() {
        let (heads, _) = head_pair(3, 0.0);
        let m = meta(4, DetectKind::V8); // wants 4 classes, tensors carry 3
        assert_eq!(decode(&heads, &m, 0.25).unwrap_err(), DetectError::HeadLayout { scale: 0 });
        let m3 = meta(3, DetectKind::V8);
        assert_eq!(
            decode(&heads[..1], &m3, 0.25).unwrap_err(),
            DetectError::HeadCount { expected: 2, got: 1 }
        );
    }

    #[test]
    fn nms_free_head_emits_at_most_one_per_cell() {
        let nc = 4;
        let (mut heads, q) = head_pair(nc, 6.0); // every class hot everywhere
        // make class 2 the strict argmax in one probed cell
        let i = heads[0].shape.index(0, 4 + 2, 0, 0);
        heads[0].data[i] = q.quantize_value(8.0);
        let dets = decode(&heads, &meta(nc, DetectKind::V10), 0.25).unwrap();
        let cells = 4 * 4 + 2 * 2;
        assert_eq!(dets.len(), cells);
        assert_eq!(dets[0].class_id, 2);
        // the v8 head on the same tensors multi-labels every cell
        let v8 = decode(&heads, &meta(nc, DetectKind::V8), 0.25).unwrap();
        assert_eq!(v8.len(), cells * nc);
    }

    #[test]
    fn iou_hand_cases() {
        assert_eq!(iou([0.0, 0.0, 1.0, 1.0], [0.0, 0.0, 1.0, 1.0]), 1.0);
        assert_eq!(iou([0.0, 0.0, 1.0, 1.0], [5.0, 5.0, 6.0, 6.0]), 0.0);
        let v = iou([0.0, 0.0, 1.0, 1.0], [0.5, 0.0, 1.5, 1.0]);
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }

    fn det(class_id: usize, score: f32, bbox: [f32; 4]) -> Detection {
        Detection { class_id, score, bbox }
    }

    #[test]
    fn nms_keeps_best_of_duplicates_and_respects_classes() {
        let b = [10.0, 10.0, 20.0, 20.0];
        let kept = nms(&[det(0, 0.9, b), det(0, 0.8, b)], 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
        let kept = nms(&[det(0, 0.9, b), det(1, 0.8, b)], 0.5);
        assert_eq!(kept.len(), 2, "class-wise: different classes never suppress");
    }

    #[test]
    fn nms_tie_break_is_lower_class_then_insertion() {
        let b = [0.0, 0.0, 4.0, 4.0];
        let kept = nms(&[det(2, 0.5, b), det(1, 0.5, b)], 0.9);
        assert_eq!(kept[0].class_id, 1);
        let kept2 = nms(
            &[det(0, 0.5, [0.0, 0.0, 4.0, 4.0]), det(0, 0.5, [0.1, 0.0, 4.1, 4.0])],
            0.5,
        );
        assert_eq!(kept2.len(), 1);
        assert_eq!(kept2[0].bbox, [0.0, 0.0, 4.0, 4.0], "earlier insertion wins the tie");
    }

    /// Reference NMS built differently: repeated max extraction from a pool.
    fn nms_reference(dets: &[Detection], thr: f64) -> Vec<Detection> {
        let mut pool: Vec<(usize, Detection)> = dets.iter().cloned().enumerate().collect();
        let mut kept: Vec<Detection> = Vec::new();
        while !pool.is_empty() {
            let mut best = 0;
            for i in 1..pool.len() {
                let (bi, bd) = (&pool[best].0, &pool[best].1);
                let (ci, cd) = (&pool[i].0, &pool[i].1);
                let better = cd.score > bd.score
                    || (cd.score == bd.score
                        && (cd.class_id < bd.class_id
                            || (cd.class_id == bd.class_id && ci < bi)));
                if better {
                    best = i;
                }
            }
            let (_, d) = pool.remove(best);
            if !kept.iter().any(|k| k.class_id == d.class_id && iou(k.bbox, d.bbox) >= thr) {
                kept.push(d);
            }
        }
        kept
    }

    #[test]
    fn nms_matches_reference_on_random_sets() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dets: Vec<Detection> = (0..50)
                .map(|_| {
                    let x1: f32 = rng.gen_range(0.0..80.0);
                    let y1: f32 = rng.gen_range(0.0..80.0);
                    det(
                        rng.gen_range(0..4),
                        rng.gen_range(0.0..1.0),
                        [x1, y1, x1 + rng.gen_range(1.0..40.0), y1 + rng.gen_range(1.0..40.0)],
                    )
                })
                .collect();
            assert_eq!(nms(&dets, 0.45), nms_reference(&dets, 0.45), "seed {seed}");
        }
    }

    #[test]
    fn perfect_predictions_score_full_map() {
        let gt = vec![
            vec![
                GtBox { class_id: 0, bbox: [0.0, 0.0, 10.0, 10.0] },
                GtBox { class_id: 2, bbox: [20.0, 20.0, 30.0, 34.0] },
            ],
            vec![GtBox { class_id: 0, bbox: [5.0, 5.0, 9.0, 9.0] }],
        ];
        let preds: Vec<Vec<Detection>> = gt
            .iter()
            .map(|img| img.iter().map(|g| det(g.class_id, 1.0, g.bbox)).collect())
            .collect();
        let r = eval_map(&preds, &gt, &iou_thresholds_50_95()).unwrap();
        assert_eq!(r.map, 1.0);
        assert!(r.per_class.iter().all(|c| c.ap == 1.0));
    }

    #[test]
    fn no_predictions_score_zero() {
        let gt = vec![vec![GtBox { class_id: 0, bbox: [0.0, 0.0, 10.0, 10.0] }]];
        let preds = vec![vec![]];
        let r = eval_map(&preds, &gt, &iou_thresholds_50_95()).unwrap();
        assert_eq!(r.map, 0.0);
    }

    #[test]
    fn single_tp_at_iou_point_six_with_one_fp_hand_curve() {
        // GT (0,0,10,10); TP box (0,0,10,6): inter 60, union 100, IoU 0.6.
        // At thresholds 0.50/0.55/0.60 the ranked curve is TP then FP:
        // recall hits 1.0 at precision 1.0, so the 101-point AP is 1.0.
        // Above 0.60 both predictions are FPs and AP is 0. Mean over the
        // ladder: 3/10.
        let gt = vec![vec![GtBox { class_id: 0, bbox: [0.0, 0.0, 10.0, 10.0] }]];
        let preds = vec![vec![
            det(0, 0.9, [0.0, 0.0, 10.0, 6.0]),
            det(0, 0.3, [50.0, 50.0, 60.0, 60.0]),
        ]];
        let thr = iou_thresholds_50_95();
        let r = eval_map(&preds, &gt, &thr).unwrap();
        assert_eq!(r.per_threshold[0], 1.0, "AP@0.50");
        assert_eq!(r.per_threshold[2], 1.0, "AP@0.60");
        assert_eq!(r.per_threshold[3], 0.0, "AP@0.65");
        assert_eq!(r.per_threshold[9], 0.0, "AP@0.95");
        assert!((r.map - 0.3).abs() < 1e-12);
    }

    #[test]
    fn duplicate_predictions_of_one_gt_count_as_fp() {
        // second hit on an already-matched GT must not raise AP
        let gt = vec![vec![GtBox { class_id: 0, bbox: [0.0, 0.0, 10.0, 10.0] }]];
        let preds = vec![vec![
            det(0, 0.9, [0.0, 0.0, 10.0, 10.0]),
            det(0, 0.8, [0.0, 0.0, 10.0, 10.0]),
        ]];
        let r = eval_map(&preds, &gt, &[0.5]).unwrap();
        assert_eq!(r.map, 1.0, "TP first, duplicate is FP after full recall");
        let preds_rev = vec![vec![
            det(0, 0.8, [0.0, 0.0, 10.0, 10.0]),
            det(0, 0.9, [0.0, 0.0, 10.0, 10.0]),
        ]];
        let r2 = eval_map(&preds_rev, &gt, &[0.5]).unwrap();
        assert_eq!(r2.map, 1.0, "rank order comes from scores, not list order");
    }

    #[test]
    fn eval_rejects_empty_and_mismatched_sets() {
        assert_eq!(
            eval_map(&[], &[], &iou_thresholds_50_95()).unwrap_err(),
            DetectError::EmptyEvalSet
        );
        let preds = vec![vec![]];
        assert_eq!(
            eval_map(&preds, &[vec![], vec![]], &[0.5]).unwrap_err(),
            DetectError::EvalLengthMismatch { preds: 1, gts: 2 }
        );
    }

    #[test]
    fn threshold_ladder_is_exact() {
        let t = iou_thresholds_50_95();
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], 0.50);
        assert_eq!(t[2], 0.60);
        assert_eq!(t[9], 0.95);
    }

    prop_compose! {
        fn arb_det()(
            class_id in 0usize..3,
            score in 0.0f32..=1.0,
            x1 in 0.0f32..90.0,
            y1 in 0.0f32..90.0,
            w in 0.5f32..40.0,
            h in 0.5f32..40.0,
        ) -> Detection {
            det(class_id, score, [x1, y1, x1 + w, y1 + h])
        }
    }

    proptest! {
        #[test]
        fn iou_symmetric_unit_range(a in arb_det(), b in arb_det()) {
            let ab = iou(a.bbox, b.bbox);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, iou(b.bbox, a.bbox));
            prop_assert!((iou(a.bbox, a.bbox) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn nms_subset_pairwise_idempotent(dets in prop::collection::vec(arb_det(), 0..30)) {
            let kept = nms(&dets, DEFAULT_NMS_IOU);
            prop_assert!(kept.len() <= dets.len());
            for k in &kept {
                prop_assert!(dets.contains(k));
            }
            for i in 0..kept.len() {
                for j in i + 1..kept.len() {
                    if kept[i].class_id == kept[j].class_id {
                        prop_assert!(iou(kept[i].bbox, kept[j].bbox) < DEFAULT_NMS_IOU);
                    }
                }
            }
            prop_assert_eq!(nms(&kept, DEFAULT_NMS_IOU), kept.clone());
        }

        #[test]
        fn map_order_invariant_for_distinct_scores(seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = vec![vec![
                GtBox { class_id: 0, bbox: [10.0, 10.0, 30.0, 30.0] },
                GtBox { class_id: 1, bbox: [40.0, 40.0, 70.0, 80.0] },
            ]];
            let mut preds: Vec<Detection> = (0..8).map(|i| {
                let x1: f32 = rng.gen_range(0.0..60.0);
                let y1: f32 = rng.gen_range(0.0..60.0);
                det(
                    rng.gen_range(0..2),
                    // distinct scores by construction
                    0.9 - 0.05 * i as f32,
                    [x1, y1, x1 + rng.gen_range(5.0..30.0), y1 + rng.gen_range(5.0..30.0)],
                )
            }).collect();
            let forward = eval_map(&[preds.clone()], &gt, &iou_thresholds_50_95()).unwrap();
            preds.reverse();
            let reversed = eval_map(&[preds], &gt, &iou_thresholds_50_95()).unwrap();
            prop_assert_eq!(forward.map, reversed.map);
        }
    }
}

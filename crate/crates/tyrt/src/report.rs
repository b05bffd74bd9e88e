//! Report structures shared by the subcommands: JSON-serializable types,
//! aligned text renderings, and annotated-image output. Every renderer is a
//! pure function of its report so outputs are golden-file stable.

use serde::{Deserialize, Serialize};

use tyrt_core::detect::{ClassAp, Detection, GtBox, MapReport};
use tyrt_core::image::RgbImage;
use tyrt_core::plan::{CycleEstimate, TileSchedule, TransferTotals};
use tyrt_core::power::{LoopSummary, OperatingPoint, StageReport};

/// Fixed per-class annotation colors; class_id indexes modulo the palette.
pub const PALETTE: [[u8; 3]; 10] = [
    [230, 60, 60],
    [60, 180, 75],
    [65, 100, 225],
    [255, 200, 0],
    [145, 30, 180],
    [70, 240, 240],
    [245, 130, 48],
    [240, 50, 230],
    [60, 245, 160],
    [170, 110, 40],
];

pub fn class_color(class_id: usize) -> [u8; 3] {
    PALETTE[class_id % PALETTE.len()]
}

/// Detection lines printed per frame in the text report.
pub const FRAME_DETAIL_LINES: usize = 5;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DetectionLine {
    pub class_id: usize,
    pub score: f32,
    pub bbox: [f32; 4],
}

impl From<&Detection> for DetectionLine {
    fn from(d: &Detection) -> Self {
        DetectionLine { class_id: d.class_id, score: d.score, bbox: d.bbox }
    }
}

impl DetectionLine {
    pub fn to_detection(&self) -> Detection {
        Detection { class_id: self.class_id, score: self.score, bbox: self.bbox }
    }
}

/// Ground-truth box as stored in eval input files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GtLine {
    pub class_id: usize,
    pub bbox: [f32; 4],
}

impl GtLine {
    pub fn to_gt(&self) -> GtBox {
        GtBox { class_id: self.class_id, bbox: self.bbox }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameReport {
    pub index: usize,
    pub buffer: u8,
    pub acquired_at_ms: f64,
    pub detections: Vec<DetectionLine>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageLine {
    pub stage: String,
    pub current_ma: f64,
    pub voltage_v: f64,
    pub power_mw: f64,
    pub time_ms: f64,
    pub energy_mj: f64,
}

impl From<&StageReport> for StageLine {
    fn from(s: &StageReport) -> Self {
        StageLine {
            stage: s.stage.as_str().to_string(),
            current_ma: s.current_ma,
            voltage_v: s.voltage_v,
            power_mw: s.power_mw,
            time_ms: s.time_ms,
            energy_mj: s.energy_mj,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopLine {
    pub total_time_ms: f64,
    pub loop_energy_mj: f64,
    pub avg_power_mw: f64,
    pub fps: f64,
}

impl From<&LoopSummary> for LoopLine {
    fn from(l: &LoopSummary) -> Self {
        LoopLine {
            total_time_ms: l.total_time_ms,
            loop_energy_mj: l.loop_energy_mj,
            avg_power_mw: l.avg_power_mw,
            fps: l.fps,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DeclaredLine {
    pub time_ms: Option<f64>,
    pub energy_mj: Option<f64>,
    pub power_mw: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComputeLine {
    pub macs: u64,
    pub total_cycles: u64,
    pub compute_cycles: u64,
    pub stall_cycles: u64,
    pub achieved_macs_per_cycle: f64,
    pub peak_macs_per_cycle: f64,
    pub predicted_inference_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub model: String,
    pub classes: usize,
    pub resolution: usize,
    pub profile: String,
    pub seed: u64,
    pub frames: usize,
    pub stages: Vec<StageLine>,
    pub loop_modeled: LoopLine,
    pub loop_declared: DeclaredLine,
    pub steady_period_ms: f64,
    pub compute: ComputeLine,
    pub battery_hours_system: f64,
    pub battery_hours_loop: f64,
    /// Host wall-clock, present only when requested; never a modeled claim.
    pub host_wall_ms: Option<f64>,
    pub per_frame: Vec<FrameReport>,
}

pub fn render_pipeline_text(r: &PipelineReport) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "pipeline report: {} ({} classes, {res}x{res})  profile {}  seed {}\n",
        r.model,
        r.classes,
        r.profile,
        r.seed,
        res = r.resolution,
    ));
    s.push_str(&format!("frames processed: {}\n\n", r.frames));

    s.push_str(&format!(
        "{:<13} {:>8} {:>6} {:>9} {:>9} {:>9}\n",
        "stage", "I/mA", "U/V", "P/mW", "t/ms", "E/mJ"
    ));
    for line in &r.stages {
        s.push_str(&format!(
            "{:<13} {:>8.2} {:>6.2} {:>9.2} {:>9.3} {:>9.3}\n",
            line.stage, line.current_ma, line.voltage_v, line.power_mw, line.time_ms, line.energy_mj
        ));
    }
    s.push_str(&format!(
        "{:<13} {:>8} {:>6} {:>9.2} {:>9.2} {:>9.3}\n",
        "loop (sum)", "-", "-", r.loop_modeled.avg_power_mw, r.loop_modeled.total_time_ms,
        r.loop_modeled.loop_energy_mj
    ));
    if r.loop_declared.time_ms.is_some() {
        s.push_str(&format!(
            "{:<13} {:>8} {:>6} {:>9} {:>9} {:>9}\n",
            "loop (decl)",
            "-",
            "-",
            r.loop_declared.power_mw.map_or("-".into(), |v| format!("{v:.2}")),
            r.loop_declared.time_ms.map_or("-".into(), |v| format!("{v:.2}")),
            r.loop_declared.energy_mj.map_or("-".into(), |v| format!("{v:.3}")),
        ));
    }
    s.push_str(&format!("\nthroughput: {:.2} fps (modeled)\n", r.loop_modeled.fps));
    s.push_str(&format!(
        "steady-state period: {:.2} ms (capture overlapped with processing)\n",
        r.steady_period_ms
    ));
    s.push_str(&format!(
        "compute: {} MACs, {} cycles, {:.2}/{:.2} MAC/cycle, predicted inference {:.2} ms\n",
        r.compute.macs,
        r.compute.total_cycles,
        r.compute.achieved_macs_per_cycle,
        r.compute.peak_macs_per_cycle,
        r.compute.predicted_inference_ms
    ));
    s.push_str(&format!(
        "battery: {:.2} h at system power, {:.2} h at loop power\n",
        r.battery_hours_system, r.battery_hours_loop
    ));
    if let Some(wall) = r.host_wall_ms {
        s.push_str(&format!("host wall clock: {wall:.1} ms (measurement of this host, not modeled)\n"));
    }
    for frame in &r.per_frame {
        s.push_str(&format!(
            "frame {:04}: buffer {}, acquired {:.2} ms, {} detections\n",
            frame.index,
            frame.buffer,
            frame.acquired_at_ms,
            frame.detections.len()
        ));
        // Text report shows the leading few; detections.json has them all.
        for d in frame.detections.iter().take(FRAME_DETAIL_LINES) {
            s.push_str(&format!(
                "  class {:>3}  score {:.3}  box [{:.1}, {:.1}, {:.1}, {:.1}]\n",
                d.class_id, d.score, d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]
            ));
        }
        if frame.detections.len() > FRAME_DETAIL_LINES {
            s.push_str(&format!("  ... {} more\n", frame.detections.len() - FRAME_DETAIL_LINES));
        }
    }
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerPlanLine {
    pub layer: usize,
    pub name: String,
    pub double_buffered: bool,
    pub tile_c: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub tiles: usize,
    pub max_resident_bytes: u64,
    pub l3_weight_bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferLine {
    pub l3_to_l2: u64,
    pub l2_to_l1: u64,
    pub l1_to_l2: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanReport {
    pub model: String,
    pub l1_bytes: u64,
    pub l2_bytes: u64,
    pub l3_bytes: u64,
    pub layers: Vec<LayerPlanLine>,
    pub transfers: TransferLine,
    pub compute: ComputeLine,
}

pub fn plan_report(
    model: &str,
    sched: &TileSchedule,
    transfers: &TransferTotals,
    cycles: &CycleEstimate,
    peak: f64,
    frequency_hz: f64,
) -> PlanReport {
    PlanReport {
        model: model.to_string(),
        l1_bytes: sched.budget.l1_bytes,
        l2_bytes: sched.budget.l2_bytes,
        l3_bytes: sched.budget.l3_bytes,
        layers: sched
            .layers
            .iter()
            .map(|l| LayerPlanLine {
                layer: l.layer,
                name: l.name.clone(),
                double_buffered: l.double_buffered,
                tile_c: l.tile_c,
                tile_h: l.tile_h,
                tile_w: l.tile_w,
                tiles: l.tiles.len(),
                max_resident_bytes: l.max_resident_bytes,
                l3_weight_bytes: l.l3_weight_bytes,
            })
            .collect(),
        transfers: TransferLine {
            l3_to_l2: transfers.l3_to_l2,
            l2_to_l1: transfers.l2_to_l1,
            l1_to_l2: transfers.l1_to_l2,
        },
        compute: ComputeLine {
            macs: sched.total_macs(),
            total_cycles: cycles.total_cycles,
            compute_cycles: cycles.compute_cycles,
            stall_cycles: cycles.stall_cycles,
            achieved_macs_per_cycle: cycles.achieved_macs_per_cycle,
            peak_macs_per_cycle: peak,
            predicted_inference_ms: cycles.total_cycles as f64 / frequency_hz * 1000.0,
        },
    }
}

pub fn render_plan_text(r: &PlanReport) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "tile schedule for {}  (l1 {} B, l2 {} B, l3 {} B)\n\n",
        r.model, r.l1_bytes, r.l2_bytes, r.l3_bytes
    ));
    s.push_str(&format!(
        "{:>4}  {:<22} {:>3} {:<14} {:>6} {:>12} {:>12}\n",
        "id", "name", "db", "tile(c,h,w)", "tiles", "resident/B", "weights/B"
    ));
    for l in &r.layers {
        s.push_str(&format!(
            "{:>4}  {:<22} {:>3} {:<14} {:>6} {:>12} {:>12}\n",
            l.layer,
            l.name,
            if l.double_buffered { "yes" } else { "no" },
            format!("{},{},{}", l.tile_c, l.tile_h, l.tile_w),
            l.tiles,
            l.max_resident_bytes,
            l.l3_weight_bytes,
        ));
    }
    s.push_str(&format!(
        "\ntransfers: l3->l2 {} B, l2->l1 {} B, l1->l2 {} B\n",
        r.transfers.l3_to_l2, r.transfers.l2_to_l1, r.transfers.l1_to_l2
    ));
    s.push_str(&format!(
        "cycles: {} total ({} compute + {} stall), {:.2} MAC/cycle of {:.2} peak\n",
        r.compute.total_cycles,
        r.compute.compute_cycles,
        r.compute.stall_cycles,
        r.compute.achieved_macs_per_cycle,
        r.compute.peak_macs_per_cycle
    ));
    s.push_str(&format!(
        "predicted inference: {:.2} ms at the profile clock\n",
        r.compute.predicted_inference_ms
    ));
    s
}

/// CSV rows for plotting: one line per operating point, frontier flagged.
pub fn render_sweep_csv(points: &[OperatingPoint], frontier: &[OperatingPoint]) -> String {
    let mut s = String::from("voltage_v,frequency_mhz,latency_ms,power_mw,energy_mj,pareto\n");
    for p in points {
        let on = frontier.iter().any(|f| {
            f.voltage_v == p.voltage_v
                && f.frequency_hz == p.frequency_hz
                && f.latency_ms == p.latency_ms
                && f.energy_mj == p.energy_mj
        });
        s.push_str(&format!(
            "{:.3},{:.1},{:.4},{:.3},{:.4},{}\n",
            p.voltage_v,
            p.frequency_hz / 1.0e6,
            p.latency_ms,
            p.power_mw,
            p.energy_mj,
            u8::from(on)
        ));
    }
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassApLine {
    pub class_id: usize,
    pub ap: f64,
    pub gt_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub map_50_95: f64,
    pub per_class: Vec<ClassApLine>,
    pub per_threshold: Vec<(f64, f64)>,
}

pub fn eval_report(m: &MapReport, thresholds: &[f64]) -> EvalReport {
    EvalReport {
        map_50_95: m.map,
        per_class: m
            .per_class
            .iter()
            .map(|c: &ClassAp| ClassApLine { class_id: c.class_id, ap: c.ap, gt_count: c.gt_count })
            .collect(),
        per_threshold: thresholds.iter().copied().zip(m.per_threshold.iter().copied()).collect(),
    }
}

pub fn render_eval_text(r: &EvalReport) -> String {
    let mut s = format!("mAP@(50-95): {:.4}\n\n", r.map_50_95);
    s.push_str(&format!("{:>8} {:>8} {:>8}\n", "class", "ap", "gt"));
    for c in &r.per_class {
        s.push_str(&format!("{:>8} {:>8.4} {:>8}\n", c.class_id, c.ap, c.gt_count));
    }
    s.push_str(&format!("\n{:>8} {:>8}\n", "iou", "ap"));
    for (t, ap) in &r.per_threshold {
        s.push_str(&format!("{:>8.2} {:>8.4}\n", t, ap));
    }
    s
}

fn draw_hline(img: &mut RgbImage, x0: usize, x1: usize, y: usize, rgb: [u8; 3]) {
    if y >= img.height {
        return;
    }
    for x in x0..=x1.min(img.width - 1) {
        img.set(x, y, rgb);
    }
}

fn draw_vline(img: &mut RgbImage, x: usize, y0: usize, y1: usize, rgb: [u8; 3]) {
    if x >= img.width {
        return;
    }
    for y in y0..=y1.min(img.height - 1) {
        img.set(x, y, rgb);
    }
}

/// Draw one-pixel box outlines, color fixed per class. Boxes are given in
/// net-input coordinates and scaled to the image size.
pub fn annotate(img: &mut RgbImage, dets: &[Detection], net_resolution: usize) {
    let sx = img.width as f32 / net_resolution as f32;
    let sy = img.height as f32 / net_resolution as f32;
    for d in dets {
        let color = class_color(d.class_id);
        let x0 = ((d.bbox[0] * sx).max(0.0) as usize).min(img.width - 1);
        let y0 = ((d.bbox[1] * sy).max(0.0) as usize).min(img.height - 1);
        let x1 = ((d.bbox[2] * sx).max(0.0) as usize).min(img.width - 1);
        let y1 = ((d.bbox[3] * sy).max(0.0) as usize).min(img.height - 1);
        draw_hline(img, x0, x1, y0, color);
        draw_hline(img, x0, x1, y1, color);
        draw_vline(img, x0, y0, y1, color);
        draw_vline(img, x1, y0, y1, color);
    }
}

//! Subcommand implementations. Every function here is deterministic given
//! its arguments and seed; wall-clock numbers appear only behind the
//! explicit --host-time flag.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use tyrt_core::build::build_graph;
use tyrt_core::calib::{calibrate, quant_error, TensorCalib, TensorError};
use tyrt_core::detect::{
    decode, eval_map, iou_thresholds_50_95, nms, Detection, GtBox, GridMeta,
    DEFAULT_CONF_THRESHOLD, DEFAULT_NMS_IOU,
};
use tyrt_core::forward::run_int8_tiled;
use tyrt_core::graph::{DetectKind, GraphSpec, LayerKind, SizeVariant, Version};
use tyrt_core::image::{
    demosaic_bilinear, mosaic, steady_period_ms, to_net_input, BayerFrame, BayerPattern,
    DoubleBuffered, SyntheticScene,
};
use tyrt_core::plan::{
    estimate_cycles, plan_tiles, simulate_transfers, validate_schedule, MemBudget, TileSchedule,
};
use tyrt_core::power::{battery_runtime_h, dvfs_sweep, loop_summary, pareto_frontier, Stage};
use tyrt_core::quant::qparams_from_range;
use tyrt_core::tensor::FloatTensor;
use tyrt_core::weights::WeightStore;

use crate::cli::{
    BuildArgs, Cli, Cmd, ConfigFile, EvalArgs, PlanArgs, QuantizeArgs, ReportArgs, RunArgs,
    SweepArgs,
};
use crate::error::CliError;
use crate::format::{self, Model};
use crate::pnm;
use crate::profile::Profile;
use crate::report::{
    annotate, eval_report, plan_report, render_eval_text, render_pipeline_text, render_plan_text,
    render_sweep_csv, ComputeLine, DeclaredLine, DetectionLine, FrameReport, GtLine,
    PipelineReport, StageLine,
};

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Build(a) => cmd_build(&a),
        Cmd::Quantize(a) => cmd_quantize(&a),
        Cmd::Plan(a) => cmd_plan(&a),
        Cmd::Run(a) => cmd_run(&a),
        Cmd::Sweep(a) => cmd_sweep(&a),
        Cmd::Eval(a) => cmd_eval(&a),
        Cmd::Report(a) => cmd_report(&a),
    }
}

fn parse_version(s: &str) -> Result<Version, CliError> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "v1.3" | "v1_3" | "v13" => Version::V1_3,
        "v5" => Version::V5,
        "v8" => Version::V8,
        "v10" => Version::V10,
        _ => return Err(CliError::config(format!("unknown version '{s}' (v1.3, v5, v8, v10)"))),
    })
}

fn parse_size(s: &str) -> Result<SizeVariant, CliError> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "small" => SizeVariant::Small,
        "big" => SizeVariant::Big,
        _ => return Err(CliError::config(format!("unknown size '{s}' (small, big)"))),
    })
}

fn parse_pattern(s: &str) -> Result<BayerPattern, CliError> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "rggb" => BayerPattern::Rggb,
        "bggr" => BayerPattern::Bggr,
        "grbg" => BayerPattern::Grbg,
        "gbrg" => BayerPattern::Gbrg,
        _ => return Err(CliError::config(format!("unknown bayer pattern '{s}'"))),
    })
}

fn model_label(g: &GraphSpec) -> String {
    format!("{}-{}", g.version.as_str(), g.size.as_str())
}

fn require_model(path: &Option<PathBuf>, cfg: &ConfigFile) -> Result<PathBuf, CliError> {
    match path {
        Some(p) => Ok(p.clone()),
        None => cfg
            .get::<PathBuf>("model")?
            .ok_or_else(|| CliError::config("--model is required (flag or config)")),
    }
}

fn require_quantized(m: &Model) -> Result<(), CliError> {
    for (id, layer) in m.graph.layers.iter().enumerate() {
        if matches!(layer.kind, LayerKind::Conv(_)) && m.weights.quant[id].is_none() {
            return Err(CliError::model(format!(
                "layer {id} ({}) has no int8 weights; quantize the model first",
                layer.name
            )));
        }
    }
    Ok(())
}

fn budget_from(
    profile: &Profile,
    l1: Option<u64>,
    l2: Option<u64>,
    l3: Option<u64>,
) -> Result<MemBudget, CliError> {
    Ok(MemBudget::new(
        l1.unwrap_or(profile.l1_bytes),
        l2.unwrap_or(profile.l2_bytes),
        l3.unwrap_or(profile.l3_bytes),
    )?)
}

/// Synthetic Bayer frames pushed through the full image pipeline, as float
/// net inputs. The [0,1] input quantization is exact for 8-bit data, so
/// these are bit-identical to what the int8 path will see.
fn synthetic_float_inputs(g: &GraphSpec, seed: u64, count: usize) -> Vec<FloatTensor> {
    let res = g.input_resolution;
    let scene = SyntheticScene { width: res, height: res, pattern: BayerPattern::Rggb, seed };
    let q01 = qparams_from_range(0.0, 1.0);
    (0..count)
        .map(|i| {
            let rgb = demosaic_bilinear(&scene.bayer_frame(i));
            to_net_input(&rgb, res, q01).dequantize()
        })
        .collect()
}

/// All .pgm/.ppm frames in a directory, sorted by file name. PPM frames are
/// mosaiced so everything enters the pipeline as raw Bayer.
fn load_dir_frames(dir: &Path, pattern: BayerPattern) -> Result<Vec<BayerFrame>, CliError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::config(format!("source {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                Some(ref e) if e == "pgm" || e == "ppm"
            )
        })
        .collect();
    paths.sort();
    let mut frames = Vec::with_capacity(paths.len());
    for p in paths {
        let ext = p.extension().and_then(|e| e.to_str()).unwrap().to_ascii_lowercase();
        if ext == "pgm" {
            frames.push(pnm::load_pgm(&p, pattern)?);
        } else {
            let rgb = pnm::load_ppm(&p)?;
            frames.push(
                mosaic(&rgb, pattern)
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?,
            );
        }
    }
    Ok(frames)
}

pub fn cmd_build(a: &BuildArgs) -> Result<(), CliError> {
    let version = parse_version(&a.version)?;
    let size = parse_size(&a.size)?;
    let graph = build_graph(version, size, a.classes, a.resolution)?;
    let mut weights = WeightStore::random_init(&graph, a.seed);
    if a.calibrate > 0 {
        let images = synthetic_float_inputs(&graph, a.seed, a.calibrate);
        calibrate(&graph, &mut weights, &images)?;
    }
    let model = Model { graph, weights };
    format::save(&a.out, &model)?;
    let text = format::manifest(&model);
    fs::write(a.out.with_extension("manifest.txt"), &text)?;
    print!("{text}");
    println!("\nwrote {}", a.out.display());
    Ok(())
}

fn render_calibration_text(rows: &[TensorCalib], images: usize) -> String {
    let mut s = format!("calibrated on {images} frame(s)\n");
    s.push_str(&format!(
        "{:>4}  {:<22} {:>10} {:>10} {:>10} {:>5}\n",
        "id", "name", "min", "max", "scale", "zp"
    ));
    for r in rows {
        s.push_str(&format!(
            "{:>4}  {:<22} {:>10.4} {:>10.4} {:>10.6} {:>5}\n",
            r.layer, r.name, r.min, r.max, r.q.scale, r.q.zero_point
        ));
    }
    s
}

fn render_quant_error_text(rows: &[TensorError]) -> String {
    let mut s = String::from("float vs int8 execution error per tensor\n");
    s.push_str(&format!("{:>4}  {:<22} {:>12} {:>12}\n", "id", "name", "max_abs", "rmse"));
    for r in rows {
        s.push_str(&format!(
            "{:>4}  {:<22} {:>12.5} {:>12.5}\n",
            r.layer, r.name, r.max_abs, r.rmse
        ));
    }
    s
}

pub fn cmd_quantize(a: &QuantizeArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let model_path = require_model(&a.model, &cfg)?;
    let source = match &a.source {
        Some(s) => s.clone(),
        None => cfg.get::<String>("source")?.unwrap_or_else(|| "synthetic".into()),
    };
    let frames = a.frames.or(cfg.get("frames")?).unwrap_or(8);
    let seed = a.seed.or(cfg.get("seed")?).unwrap_or(0);
    let pattern = match &a.pattern {
        Some(p) => parse_pattern(p)?,
        None => match cfg.get::<String>("pattern")? {
            Some(p) => parse_pattern(&p)?,
            None => BayerPattern::Rggb,
        },
    };

    let mut model = format::load(&model_path)?;
    let images: Vec<FloatTensor> = if source == "synthetic" {
        synthetic_float_inputs(&model.graph, seed, frames)
    } else {
        let res = model.graph.input_resolution;
        let q01 = qparams_from_range(0.0, 1.0);
        load_dir_frames(Path::new(&source), pattern)?
            .iter()
            .map(|f| to_net_input(&demosaic_bilinear(f), res, q01).dequantize())
            .collect()
    };
    let rows = calibrate(&model.graph, &mut model.weights, &images)?;
    print!("{}", render_calibration_text(&rows, images.len()));
    if a.report_error {
        let errs = quant_error(&model.graph, &model.weights, &images)?;
        print!("\n{}", render_quant_error_text(&errs));
    }
    format::save(&a.out, &model)?;
    println!("\nwrote {}", a.out.display());
    Ok(())
}

fn planned(
    model: &Model,
    profile: &Profile,
    l1: Option<u64>,
    l2: Option<u64>,
    l3: Option<u64>,
) -> Result<TileSchedule, CliError> {
    let budget = budget_from(profile, l1, l2, l3)?;
    let sched = plan_tiles(&model.graph, &budget)?;
    validate_schedule(&model.graph, &sched)?;
    Ok(sched)
}

pub fn cmd_plan(a: &PlanArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let model_path = require_model(&a.model, &cfg)?;
    let profile_name = match &a.profile {
        Some(p) => p.clone(),
        None => cfg.get::<String>("profile")?.unwrap_or_else(|| "paper-gap9".into()),
    };
    let profile = Profile::resolve(&profile_name)?;
    let model = format::load(&model_path)?;
    let l1 = a.l1_bytes.or(cfg.get("l1-bytes")?);
    let l2 = a.l2_bytes.or(cfg.get("l2-bytes")?);
    let l3 = a.l3_bytes.or(cfg.get("l3-bytes")?);
    let sched = planned(&model, &profile, l1, l2, l3)?;
    let transfers = simulate_transfers(&sched);
    let machine = profile.machine_model();
    let cycles = estimate_cycles(&sched, &machine);
    let rep = plan_report(
        &model_label(&model.graph),
        &sched,
        &transfers,
        &cycles,
        machine.macs_per_cycle_peak,
        machine.frequency_hz,
    );
    if let Some(path) = &a.json {
        fs::write(path, serde_json::to_string_pretty(&rep)?)?;
    }
    print!("{}", render_plan_text(&rep));
    Ok(())
}

pub fn cmd_run(a: &RunArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let model_path = require_model(&a.model, &cfg)?;
    let source = match &a.source {
        Some(s) => s.clone(),
        None => cfg.get::<String>("source")?.unwrap_or_else(|| "synthetic".into()),
    };
    let frames = a.frames.or(cfg.get("frames")?).unwrap_or(10);
    let out_dir = match &a.out_dir {
        Some(d) => d.clone(),
        None => cfg
            .get::<PathBuf>("out-dir")?
            .ok_or_else(|| CliError::config("--out-dir is required (flag or config)"))?,
    };
    let profile_name = match &a.profile {
        Some(p) => p.clone(),
        None => cfg.get::<String>("profile")?.unwrap_or_else(|| "paper-gap9".into()),
    };
    let seed = a.seed.or(cfg.get("seed")?).unwrap_or(0);
    let conf = a.conf_threshold.or(cfg.get("conf-threshold")?).unwrap_or(DEFAULT_CONF_THRESHOLD);
    let iou = a.nms_iou.or(cfg.get("nms-iou")?).unwrap_or(DEFAULT_NMS_IOU);
    let pattern = match &a.pattern {
        Some(p) => parse_pattern(p)?,
        None => match cfg.get::<String>("pattern")? {
            Some(p) => parse_pattern(&p)?,
            None => BayerPattern::Rggb,
        },
    };

    let wall_start = Instant::now();
    let profile = Profile::resolve(&profile_name)?;
    let model = format::load(&model_path)?;
    require_quantized(&model)?;
    let l1 = a.l1_bytes.or(cfg.get("l1-bytes")?);
    let l2 = a.l2_bytes.or(cfg.get("l2-bytes")?);
    let l3 = a.l3_bytes.or(cfg.get("l3-bytes")?);
    let sched = planned(&model, &profile, l1, l2, l3)?;
    let machine = profile.machine_model();
    let cycles = estimate_cycles(&sched, &machine);
    let meta = GridMeta::of(&model.graph);
    let res = model.graph.input_resolution;

    let stage_reports = profile.loop_stages()?;
    let loop_modeled = loop_summary(&stage_reports).expect("four loop stages");
    let capture_ms = profile.require_stage(Stage::Capture)?.time_ms;
    let processing_ms: f64 =
        stage_reports.iter().filter(|s| s.stage != Stage::Capture).map(|s| s.time_ms).sum();

    let scene =
        SyntheticScene { width: res, height: res, pattern: BayerPattern::Rggb, seed };
    let source_frames: Vec<BayerFrame> = if source == "synthetic" {
        (0..frames).map(|i| scene.bayer_frame(i)).collect()
    } else {
        load_dir_frames(Path::new(&source), pattern)?
    };
    let synthetic = source == "synthetic";
    let count = source_frames.len();

    fs::create_dir_all(&out_dir)?;
    let mut iter = source_frames.into_iter();
    let mut db = DoubleBuffered::new(move |_| iter.next(), capture_ms);
    let mut per_frame: Vec<FrameReport> = Vec::new();
    let mut detections_out: Vec<Vec<DetectionLine>> = Vec::new();
    let mut index = 0usize;
    while let Some(acq) = db.next() {
        let rgb = demosaic_bilinear(&acq.frame);
        let input = to_net_input(&rgb, res, model.weights.act_q[0]);
        let heads = run_int8_tiled(&model.graph, &model.weights, &input, &sched)?;
        let mut dets = decode(&heads, &meta, conf)?;
        if meta.detect == DetectKind::V8 {
            dets = nms(&dets, iou);
        }
        db.finish_processing(processing_ms);
        if !a.no_images {
            let mut annotated = rgb.clone();
            annotate(&mut annotated, &dets, res);
            pnm::save_ppm(&out_dir.join(format!("frame_{index:04}.ppm")), &annotated)?;
        }
        let lines: Vec<DetectionLine> = dets.iter().map(DetectionLine::from).collect();
        per_frame.push(FrameReport {
            index,
            buffer: acq.buffer,
            acquired_at_ms: acq.acquired_at_ms,
            detections: lines.clone(),
        });
        detections_out.push(lines);
        index += 1;
    }

    let report = PipelineReport {
        model: model_label(&model.graph),
        classes: model.graph.num_classes,
        resolution: res,
        profile: profile.name.clone(),
        seed,
        frames: count,
        stages: stage_reports.iter().map(StageLine::from).collect(),
        loop_modeled: (&loop_modeled).into(),
        loop_declared: DeclaredLine {
            time_ms: profile.declared_loop.time_ms,
            energy_mj: profile.declared_loop.energy_mj,
            power_mw: profile.declared_loop.power_mw,
        },
        steady_period_ms: steady_period_ms(capture_ms, processing_ms),
        compute: ComputeLine {
            macs: sched.total_macs(),
            total_cycles: cycles.total_cycles,
            compute_cycles: cycles.compute_cycles,
            stall_cycles: cycles.stall_cycles,
            achieved_macs_per_cycle: cycles.achieved_macs_per_cycle,
            peak_macs_per_cycle: machine.macs_per_cycle_peak,
            predicted_inference_ms: cycles.total_cycles as f64 / machine.frequency_hz * 1000.0,
        },
        battery_hours_system: battery_runtime_h(
            profile.battery_capacity_mah,
            profile.battery_voltage_v,
            profile.system_power_mw,
        ),
        battery_hours_loop: battery_runtime_h(
            profile.battery_capacity_mah,
            profile.battery_voltage_v,
            profile.declared_loop.power_mw.unwrap_or(loop_modeled.avg_power_mw),
        ),
        host_wall_ms: a.host_time.then(|| wall_start.elapsed().as_secs_f64() * 1000.0),
        per_frame,
    };

    fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    fs::write(out_dir.join("detections.json"), serde_json::to_string_pretty(&detections_out)?)?;
    if synthetic {
        let gts: Vec<Vec<GtLine>> = (0..count)
            .map(|i| {
                scene
                    .rgb_frame(i)
                    .1
                    .iter()
                    .map(|r| GtLine {
                        class_id: 0,
                        bbox: [r.x0 as f32, r.y0 as f32, r.x1 as f32, r.y1 as f32],
                    })
                    .collect()
            })
            .collect();
        fs::write(out_dir.join("gt.json"), serde_json::to_string_pretty(&gts)?)?;
    }
    let text = render_pipeline_text(&report);
    fs::write(out_dir.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

/// Default sweep grid: 0.60 V to 1.00 V in 50 mV steps. Attainable clock
/// rises with voltage (650*V - 150 MHz, so 0.8 V tops out at 370 MHz); each
/// column gets 50 MHz steps plus its cap. Without the cap the lowest
/// voltage would dominate every point and the frontier would collapse.
fn default_grid() -> Vec<(f64, f64)> {
    let mut points = Vec::new();
    for i in 0..=8 {
        let v = 0.60 + 0.05 * i as f64;
        let cap_mhz = 650.0 * v - 150.0;
        let mut f_mhz = 50.0;
        while f_mhz < cap_mhz {
            points.push((v, f_mhz * 1.0e6));
            f_mhz += 50.0;
        }
        points.push((v, cap_mhz * 1.0e6));
    }
    points
}

fn read_points(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("points {}: {e}", path.display())))?;
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = || CliError::config(format!("points line {}: expected 'voltage_v frequency_mhz'", i + 1));
        if parts.len() != 2 {
            return Err(bad());
        }
        let v: f64 = parts[0].parse().map_err(|_| bad())?;
        let f: f64 = parts[1].parse().map_err(|_| bad())?;
        if !(v > 0.0 && f > 0.0 && v.is_finite() && f.is_finite()) {
            return Err(bad());
        }
        points.push((v, f * 1.0e6));
    }
    Ok(points)
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let profile_name = match &a.profile {
        Some(p) => p.clone(),
        None => cfg.get::<String>("profile")?.unwrap_or_else(|| "paper-gap9".into()),
    };
    let profile = Profile::resolve(&profile_name)?;
    let machine = profile.machine_model();
    let cycles = match a.cycles {
        Some(c) => c,
        None => {
            let model_path = require_model(&a.model, &cfg)
                .map_err(|_| CliError::config("sweep needs --cycles or --model"))?;
            let model = format::load(&model_path)?;
            let sched = planned(&model, &profile, None, None, None)?;
            estimate_cycles(&sched, &machine).total_cycles
        }
    };
    let points = match &a.points {
        Some(p) => read_points(p)?,
        None => default_grid(),
    };
    let ops = dvfs_sweep(cycles, &points, &machine)
        .map_err(|e| CliError::config(format!("{e}")))?;
    let frontier = pareto_frontier(&ops);
    let csv = render_sweep_csv(&ops, &frontier);
    if let Some(path) = &a.out {
        fs::write(path, &csv)?;
    }
    print!("{csv}");
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let preds_text = fs::read_to_string(&a.preds)
        .map_err(|e| CliError::config(format!("preds {}: {e}", a.preds.display())))?;
    let gt_text = fs::read_to_string(&a.gt)
        .map_err(|e| CliError::config(format!("gt {}: {e}", a.gt.display())))?;
    let preds: Vec<Vec<DetectionLine>> = serde_json::from_str(&preds_text)
        .map_err(|e| CliError::config(format!("preds {}: {e}", a.preds.display())))?;
    let gts: Vec<Vec<GtLine>> = serde_json::from_str(&gt_text)
        .map_err(|e| CliError::config(format!("gt {}: {e}", a.gt.display())))?;
    let preds: Vec<Vec<Detection>> =
        preds.iter().map(|img| img.iter().map(|d| d.to_detection()).collect()).collect();
    let gts: Vec<Vec<GtBox>> =
        gts.iter().map(|img| img.iter().map(|g| g.to_gt()).collect()).collect();
    let thresholds = iou_thresholds_50_95();
    let m = eval_map(&preds, &gts, &thresholds).map_err(|e| CliError::config(format!("{e}")))?;
    let rep = eval_report(&m, &thresholds);
    if let Some(path) = &a.json {
        fs::write(path, serde_json::to_string_pretty(&rep)?)?;
    }
    print!("{}", render_eval_text(&rep));
    Ok(())
}

pub fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.input)
        .map_err(|e| CliError::config(format!("report {}: {e}", a.input.display())))?;
    let rep: PipelineReport = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("report {}: {e}", a.input.display())))?;
    print!("{}", render_pipeline_text(&rep));
    Ok(())
}

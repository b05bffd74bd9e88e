//! Stage-level power and energy bookkeeping, the DVFS operating-point model
//! with Pareto extraction, and battery-runtime estimation.
//!
//! Units are kept consistent throughout: current in mA, voltage in V, time
//! in ms, power in mW (mA x V), energy in mJ (mW x ms / 1000).

use alloc::vec::Vec;
use core::fmt;

use crate::plan::MachineModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Init,
    Capture,
    Demosaic,
    Inference,
    Postprocess,
    Quiescent,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Capture => "capture",
            Stage::Demosaic => "demosaic",
            Stage::Inference => "inference",
            Stage::Postprocess => "postprocess",
            Stage::Quiescent => "quiescent",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Some(match s {
            "init" => Stage::Init,
            "capture" => Stage::Capture,
            "demosaic" => Stage::Demosaic,
            "inference" => Stage::Inference,
            "postprocess" => Stage::Postprocess,
            "quiescent" => Stage::Quiescent,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageReport {
    pub stage: Stage,
    pub time_ms: f64,
    pub current_ma: f64,
    pub voltage_v: f64,
    pub power_mw: f64,
    pub energy_mj: f64,
}

impl StageReport {
    /// Build a report from a raw (current, voltage, time) measurement.
    pub fn from_measurement(stage: Stage, current_ma: f64, voltage_v: f64, time_ms: f64) -> Self {
        let power_mw = current_ma * voltage_v;
        StageReport {
            stage,
            time_ms,
            current_ma,
            voltage_v,
            power_mw,
            energy_mj: stage_energy(current_ma, voltage_v, time_ms),
        }
    }

    /// P = I*V and E = P*t must hold to within 1% plus half an ulp of a
    /// 3-decimal print, which absorbs values published after rounding.
    pub fn is_consistent(&self) -> bool {
        within_print_slack(self.power_mw, self.current_ma * self.voltage_v)
            && within_print_slack(self.energy_mj, self.power_mw * self.time_ms / 1000.0)
    }
}

/// |printed - computed| <= max(1% of computed, 0.0005).
pub fn within_print_slack(printed: f64, computed: f64) -> bool {
    let slack = libm::fabs(computed) * 0.01;
    libm::fabs(printed - computed) <= if slack > 0.0005 { slack } else { 0.0005 }
}

/// Energy in mJ of a stage drawing `current_ma` at `voltage_v` for `time_ms`.
pub fn stage_energy(current_ma: f64, voltage_v: f64, time_ms: f64) -> f64 {
    current_ma * voltage_v * time_ms / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopSummary {
    pub total_time_ms: f64,
    pub loop_energy_mj: f64,
    pub avg_power_mw: f64,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PowerError {
    EmptyLoop,
    EmptySweep,
}

impl fmt::Display for PowerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PowerError::EmptyLoop => write!(f, "loop summary needs at least one stage"),
            PowerError::EmptySweep => write!(f, "sweep needs at least one operating point"),
        }
    }
}

/// Aggregate the per-iteration stages of the detection loop.
pub fn loop_summary(stages: &[StageReport]) -> Result<LoopSummary, PowerError> {
    if stages.is_empty() {
        return Err(PowerError::EmptyLoop);
    }
    let total_time_ms: f64 = stages.iter().map(|s| s.time_ms).sum();
    let loop_energy_mj: f64 = stages.iter().map(|s| s.energy_mj).sum();
    Ok(LoopSummary {
        total_time_ms,
        loop_energy_mj,
        avg_power_mw: loop_energy_mj / total_time_ms * 1000.0,
        fps: 1000.0 / total_time_ms,
    })
}

/// Hours a battery of `capacity_mah` at `nominal_v` sustains `system_power_mw`.
pub fn battery_runtime_h(capacity_mah: f64, nominal_v: f64, system_power_mw: f64) -> f64 {
    capacity_mah * nominal_v / system_power_mw
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub voltage_v: f64,
    pub frequency_hz: f64,
    pub latency_ms: f64,
    pub power_mw: f64,
    pub energy_mj: f64,
}

/// Core power draw at an operating point: c_dyn * V^2 * f + leak(V).
pub fn dvfs_power_mw(m: &MachineModel, voltage_v: f64, frequency_hz: f64) -> f64 {
    m.c_dyn_mw_per_v2_mhz * voltage_v * voltage_v * (frequency_hz / 1.0e6)
        + m.leak_mw_per_v * voltage_v
}

/// Evaluate a network of `cycles` at each (voltage, frequency) point.
pub fn dvfs_sweep(
    cycles: u64,
    points: &[(f64, f64)],
    m: &MachineModel,
) -> Result<Vec<OperatingPoint>, PowerError> {
    if points.is_empty() {
        return Err(PowerError::EmptySweep);
    }
    Ok(points
        .iter()
        .map(|&(voltage_v, frequency_hz)| {
            let latency_ms = cycles as f64 / frequency_hz * 1000.0;
            let power_mw = dvfs_power_mw(m, voltage_v, frequency_hz);
            OperatingPoint {
                voltage_v,
                frequency_hz,
                latency_ms,
                power_mw,
                energy_mj: power_mw * latency_ms / 1000.0,
            }
        })
        .collect())
}

/// Points not dominated in (latency, energy), sorted by latency ascending.
/// Exact (latency, energy) duplicates collapse to one representative, so the
/// result is a strict antichain: along the frontier energy strictly falls.
pub fn pareto_frontier(points: &[OperatingPoint]) -> Vec<OperatingPoint> {
    let mut sorted: Vec<&OperatingPoint> = points.iter().collect();
    sorted.sort_by(|a, b| {
        a.latency_ms
            .partial_cmp(&b.latency_ms)
            .expect("finite latencies")
            .then(a.energy_mj.partial_cmp(&b.energy_mj).expect("finite energies"))
            .then(a.voltage_v.partial_cmp(&b.voltage_v).expect("finite voltages"))
            .then(a.frequency_hz.partial_cmp(&b.frequency_hz).expect("finite frequencies"))
    });
    let mut frontier: Vec<OperatingPoint> = Vec::new();
    let mut best_energy = f64::INFINITY;
    for p in sorted {
        if p.energy_mj < best_energy {
            frontier.push(*p);
            best_energy = p.energy_mj;
        }
    }
    frontier
}

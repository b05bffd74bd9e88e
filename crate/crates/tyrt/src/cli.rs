//! Command-line surface: argument structs for every subcommand plus the
//! optional key=value config file. Flags always override config values,
//! which is why overridable options are `Option` here and defaults are
//! applied only after the merge.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "tyrt", about = "int8 detection micro-runtime and benchmark harness")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Build a network variant and write it as a model file
    Build(BuildArgs),
    /// Calibrate activation ranges on frames and write the int8 model
    Quantize(QuantizeArgs),
    /// Tile a model against memory budgets and print the schedule
    Plan(PlanArgs),
    /// Run the capture-demosaic-inference-postprocess loop over frames
    Run(RunArgs),
    /// Evaluate DVFS operating points and mark the Pareto frontier
    Sweep(SweepArgs),
    /// Score detection files against ground truth
    Eval(EvalArgs),
    /// Re-render a JSON pipeline report as text
    Report(ReportArgs),
}

#[derive(Args)]
pub struct BuildArgs {
    /// Network version: v1.3, v5, v8, or v10
    #[arg(long)]
    pub version: String,
    /// Width/depth preset: small or big
    #[arg(long, default_value = "small")]
    pub size: String,
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    #[arg(long, default_value_t = 256)]
    pub resolution: usize,
    /// Weight-initialization seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Calibrate and quantize on this many synthetic frames (0 keeps the
    /// model float-only)
    #[arg(long, default_value_t = 0)]
    pub calibrate: usize,
    /// Output model path; a text manifest lands next to it
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Frame source: "synthetic" or a directory of .pgm/.ppm files
    #[arg(long)]
    pub source: Option<String>,
    /// Synthetic calibration frame count
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Bayer pattern of raw frames: rggb, bggr, grbg, gbrg
    #[arg(long)]
    pub pattern: Option<String>,
    /// Also compare float vs int8 execution per tensor
    #[arg(long)]
    pub report_error: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Built-in profile name or a profile file path
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub l1_bytes: Option<u64>,
    #[arg(long)]
    pub l2_bytes: Option<u64>,
    #[arg(long)]
    pub l3_bytes: Option<u64>,
    /// Also write the schedule as JSON
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Frame source: "synthetic" or a directory of .pgm/.ppm files
    #[arg(long)]
    pub source: Option<String>,
    /// Synthetic frame count
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub l1_bytes: Option<u64>,
    #[arg(long)]
    pub l2_bytes: Option<u64>,
    #[arg(long)]
    pub l3_bytes: Option<u64>,
    #[arg(long)]
    pub conf_threshold: Option<f32>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pattern: Option<String>,
    /// Skip writing annotated frames
    #[arg(long)]
    pub no_images: bool,
    /// Also report host wall-clock time (labeled; not a modeled number)
    #[arg(long)]
    pub host_time: bool,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model whose planned cycle count feeds the sweep
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Cycle count to sweep, overriding --model
    #[arg(long)]
    pub cycles: Option<u64>,
    #[arg(long)]
    pub profile: Option<String>,
    /// Text file of "voltage_v frequency_mhz" lines; a default grid is
    /// swept when omitted
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Write the CSV table here as well as to stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// JSON file: per image, an array of {class_id, score, bbox}
    #[arg(long)]
    pub preds: PathBuf,
    /// JSON file: per image, an array of {class_id, bbox}
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// report.json produced by `run`
    #[arg(long)]
    pub input: PathBuf,
}

const CONFIG_KEYS: [&str; 12] = [
    "model",
    "source",
    "frames",
    "out-dir",
    "profile",
    "seed",
    "pattern",
    "conf-threshold",
    "nms-iou",
    "l1-bytes",
    "l2-bytes",
    "l3-bytes",
];

/// Parsed config file: long-flag names as keys, one per line.
#[derive(Debug, Default)]
pub struct ConfigFile {
    pairs: Vec<(String, String)>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<ConfigFile, CliError> {
        let Some(path) = path else { return Ok(ConfigFile::default()) };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::config(format!(
                    "config line {}: expected 'key = value', got '{line}'",
                    i + 1
                )));
            };
            let key = key.trim().to_string();
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(CliError::config(format!("config line {}: unknown key '{key}'", i + 1)));
            }
            if pairs.iter().any(|(k, _)| *k == key) {
                return Err(CliError::config(format!("config line {}: duplicate key '{key}'", i + 1)));
            }
            pairs.push((key, value.trim().to_string()));
        }
        Ok(ConfigFile { pairs })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::config(format!("config key '{key}': bad value '{v}'"))),
        }
    }
}

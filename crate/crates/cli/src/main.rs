//! `smokeseg`: data generation, training, segmentation, evaluation and
//! detection from one binary.
//!
//! Exit codes: 0 success, 1 invalid arguments or configuration, 2 runtime
//! failure, 3 a check that ran and failed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(anyhow::Error),
    Check(String),
}

impl From<smokeseg::Error> for Failure {
    fn from(e: smokeseg::Error) -> Self {
        match e {
            smokeseg::Error::Config(_) => Failure::Validation(e.to_string()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Check(_) => 3,
        }
    }
}

/// Image size written as `HxW`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Size {
    pub height: u32,
    pub width: u32,
}

fn parse_size(s: &str) -> Result<Size, String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let dim = |v: &str| match v.trim().parse::<u32>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("expected a positive integer, got {v:?}")),
    };
    Ok(Size {
        height: dim(h)?,
        width: dim(w)?,
    })
}

#[derive(Debug, Parser)]
#[command(
    name = "smokeseg",
    version,
    about = "Smoke segmentation with a two-path encoder-decoder network"
)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate procedural RGBA pure-smoke images.
    GenSmoke(GenSmokeArgs),
    /// Generate procedural RGB background images.
    GenBackground(GenBackgroundArgs),
    /// Blend smokes over backgrounds into composites, masks and a manifest.
    Composite(CompositeArgs),
    /// Train a network on a manifest.
    Train(TrainArgs),
    /// Segment images with a trained checkpoint.
    Segment(SegmentArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Frame-level smoke detection over an ordered directory of frames.
    Detect(DetectArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Print every layer's output shape for an input size.
    Trace(TraceArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenSmokeArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long, value_parser = parse_size, default_value = "256x256")]
    pub size: Size,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GenBackgroundArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long, value_parser = parse_size, default_value = "256x256")]
    pub size: Size,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CompositeArgs {
    #[arg(long)]
    pub backgrounds: PathBuf,
    /// Directory of RGBA smoke images; procedural smoke when omitted.
    #[arg(long)]
    pub smokes: Option<PathBuf>,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Size of procedural smoke.
    #[arg(long, value_parser = parse_size, default_value = "256x256")]
    pub smoke_size: Size,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest (`manifest.jsonl`).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SegmentArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image files or directories of PNG images.
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the fused probability map as 8-bit gray instead of a 0/255 mask.
    #[arg(long)]
    pub raw: bool,
    /// Also write the coarse and fine maps under `out/maps/`.
    #[arg(long)]
    pub maps: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Row label in the summary table.
    #[arg(long, default_value = "Ours")]
    pub method: String,
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub frames: PathBuf,
    /// Defaults to `eval.pixel_threshold` from the config.
    #[arg(long)]
    pub pixel_threshold: Option<usize>,
    /// One label per frame and line: `smoke`/`1` or `non_smoke`/`0`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    /// Add whole-network checks.
    #[arg(long)]
    pub full: bool,
    /// Negate one op's adjoint to confirm the check catches it.
    #[arg(long, value_name = "OP")]
    pub mutate: Option<String>,
    /// Coordinates sampled per tensor in the network checks.
    #[arg(long, default_value_t = 200)]
    pub coords: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct TraceArgs {
    #[arg(long, value_parser = parse_size, default_value = "256x256")]
    pub size: Size,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenSmoke(a) => commands::gen_smoke(&a),
        Command::GenBackground(a) => commands::gen_background(&a),
        Command::Composite(a) => commands::composite(&a),
        Command::Train(a) => commands::train(&a),
        Command::Segment(a) => commands::segment(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Detect(a) => commands::detect(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Trace(a) => commands::trace(&a),
    }
}

/// Exits quietly when stdout is closed early, as in `smokeseg trace | head`.
fn quiet_broken_pipe() {
    let default = std::panic::take_hook();
    std::panic::set_hook(Box::new(move |info| {
        let msg = info
            .payload()
            .downcast_ref::<String>()
            .map(String::as_str)
            .unwrap_or("");
        if msg.contains("Broken pipe") {
            std::process::exit(0);
        }
        default(info);
    }));
}

fn main() -> ExitCode {
    quiet_broken_pipe();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Validation(m) | Failure::Check(m) => eprintln!("error: {m}"),
                Failure::Runtime(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}

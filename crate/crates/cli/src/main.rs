//! `smcdet`: specialize a detector to a fixed-camera scene, evaluate
//! detections, generate synthetic scenes and serve the mock detector.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "smcdet",
    version,
    about = "Scene specialization of object detectors"
)]
struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the specialization loop against an external detector worker.
    Specialize(SpecializeArgs),
    /// Recall/FPPI curve and confusion matrix of a detection file.
    Evaluate(EvaluateArgs),
    /// Render a synthetic scene with ground truth.
    Synth(SynthArgs),
    /// Dump cleaned foreground masks for a sequence.
    Bgsub(BgsubArgs),
    /// Serve the built-in mock detector on stdin/stdout.
    MockDetector(MockArgs),
}

#[derive(Debug, Args)]
struct SpecializeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Worker command line, split with shell quoting rules.
    #[arg(long)]
    detector_cmd: String,
    /// Base configuration (JSON); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model name sent with `init`.
    #[arg(long, default_value = "generic")]
    model: String,
    /// Comma-separated label space; defaults to the manifest's labels.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long)]
    alpha_p: Option<f64>,
    #[arg(long)]
    min_blob: Option<u64>,
    #[arg(long)]
    split: Option<f64>,
    /// Uniformly subsample the specialization frames to this many.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-request worker timeout in seconds.
    #[arg(long, default_value_t = 300)]
    timeout: u64,
    /// Parent of the timestamped run directory (default `$SMC_RUN_DIR`, then `run`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// FPPI values to report recall at.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1.0")]
    fppi: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Scene configuration (JSON); the built-in traffic scene if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sequence length, for the built-in scene.
    #[arg(long, default_value_t = 200)]
    frames: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BgsubArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 100)]
    min_blob: u64,
    #[arg(long, default_value_t = 1)]
    kernel_radius: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MockArgs {
    /// Mock worker configuration (JSON).
    #[arg(long, required_unless_present_all = ["manifest", "annotations"])]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    base_recall: Option<f64>,
    #[arg(long)]
    gain: Option<f64>,
    #[arg(long)]
    fp_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Specialize(a) => commands::specialize(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Synth(a) => commands::synth(a),
        Command::Bgsub(a) => commands::bgsub(a),
        Command::MockDetector(a) => commands::mock_detector(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

/// The error chain on one line, skipping causes whose text the previous
/// message already includes.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

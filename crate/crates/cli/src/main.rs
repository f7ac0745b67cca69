//! `springverb`: dataset analysis, training, evaluation, offline processing,
//! RTF benchmarking and gradient checking from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
mod run_config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use springverb::audio::Split;
use springverb::models::ModelKind;
use springverb::par::Parallelism;

/// Worker-count cap for the data-parallel paths.
pub const THREADS_ENV: &str = "SPRINGVERB_THREADS";

/// A mistake in how the program was invoked, reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(String);

impl UsageError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "springverb", version, about = "Neural spring-reverb emulation")]
struct Cli {
    /// Run every data-parallel stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write best/last checkpoints plus an epoch log.
    Train(TrainArgs),
    /// Score a checkpoint against the naive and dummy baselines.
    Eval(EvalArgs),
    /// Render a WAV file through a trained model.
    Process(ProcessArgs),
    /// Time inference and report the real-time factor.
    BenchmarkRtf(RtfArgs),
    /// LEQ, pitch and HFC of the dry and wet sides of a corpus.
    AnalyzeDataset(AnalyzeArgs),
    /// Compare tape gradients with finite differences for a model.
    Gradcheck(GradcheckArgs),
    /// Show the available architectures.
    ListModels,
}

#[derive(Args, Debug, Clone, Default)]
struct DataArgs {
    /// Directory of dry WAV files, paired with --wet-dir by file stem.
    #[arg(long, requires = "wet_dir")]
    dry_dir: Option<PathBuf>,
    #[arg(long, requires = "dry_dir")]
    wet_dir: Option<PathBuf>,
    /// Dataset manifest JSON (alternative to the directory pair).
    #[arg(long, conflicts_with_all = ["dry_dir", "wet_dir"])]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    sample_rate: Option<u32>,
    /// Seeds initialisation, batching and the dataset split.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from the last checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Seed for the split when building from directories, and for DR noise.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Also write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Print JSON instead of the table.
    #[arg(long)]
    json: bool,
    /// Length of the clip used for the model's RTF; 0 skips timing.
    #[arg(long, default_value_t = 1.0)]
    rtf_duration_s: f64,
}

#[derive(Args, Debug)]
struct ProcessArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Conditioning values, comma separated (zeros by default).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    cond: Option<Vec<f64>>,
    /// Process even when the input rate differs from the model's.
    #[arg(long)]
    force: bool,
    /// Output encoding; defaults to the input's.
    #[arg(long)]
    bit_depth: Option<DepthArg>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum DepthArg {
    Pcm16,
    Pcm24,
    Float32,
}

#[derive(Args, Debug)]
struct RtfArgs {
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    checkpoint: Option<PathBuf>,
    /// Benchmark a freshly initialised default model of this kind.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long, default_value_t = 16_000, conflicts_with = "checkpoint")]
    sample_rate: u32,
    #[arg(long, default_value_t = 5.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Restrict to one split (all pairs by default).
    #[arg(long)]
    split: Option<Split>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Write to this file instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    model: ModelKind,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Coordinates sampled per group; 0 checks every coordinate.
    #[arg(long, default_value_t = 8)]
    coords: usize,
    #[arg(long)]
    sample_rate: Option<u32>,
    /// Also check the loss functions.
    #[arg(long)]
    losses: bool,
    #[arg(long)]
    json: bool,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

fn init_threads() -> Result<(), UsageError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError::new(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    #[cfg(feature = "parallel")]
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        log::warn!("could not size the worker pool: {e}");
    }
    #[cfg(not(feature = "parallel"))]
    log::debug!("{THREADS_ENV}={n} ignored in a sequential build");
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    init_threads()?;
    let par = if cli.sequential {
        Parallelism::Sequential
    } else {
        Parallelism::Parallel
    };
    match cli.command {
        Command::Train(a) => commands::train(a, par),
        Command::Eval(a) => commands::eval(a, par),
        Command::Process(a) => commands::process(a),
        Command::BenchmarkRtf(a) => commands::benchmark_rtf(a),
        Command::AnalyzeDataset(a) => commands::analyze_dataset(a, par),
        Command::Gradcheck(a) => commands::gradcheck(a, par),
        Command::ListModels => commands::list_models(),
    }
}

/// The error chain joined by `: `, skipping causes already quoted by the
/// message above them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

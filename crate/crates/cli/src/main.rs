//! `phasefold`: uniform-in-phase-space instance selection from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use phasefold_core::ErrorClass;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(PathBuf, std::io::Error),
    Core(phasefold_core::Error),
}

impl From<phasefold_core::Error> for CliError {
    fn from(e: phasefold_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(p, e) => write!(f, "i/o error on {}: {e}", p.display()),
            CliError::Core(e) => write!(f, "{e} [{}]", e.code()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(..) => 3,
            CliError::Core(e) => match e.class() {
                ErrorClass::Usage => 2,
                ErrorClass::Io => 3,
                ErrorClass::Numeric => 4,
                ErrorClass::MemoryBudget => 5,
            },
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "phasefold", version, about, args_override_self = true)]
struct Cli {
    /// Flat `key = value` file of default flags; command-line flags win.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
    /// Train a density estimator and save a checkpoint.
    Fit(FitArgs),
    /// Select a subset that is close to uniform in phase space.
    Sample(SampleArgs),
    /// Distance criterion of one or more selections.
    Metric(MetricArgs),
    /// Comparison samplers (random, stratified, brute force, full binning).
    Baseline(BaselineArgs),
    /// Desk-scale experiments written as CSV/JSON.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset file (`.csv`, anything else is read as the binary format).
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Generator: gaussian1d, gaussian2d, surrogate1..surrogate5, sinusoid.
    #[arg(long, value_name = "NAME", conflicts_with = "input")]
    pub generate: Option<String>,
    /// Rows to generate.
    #[arg(long, default_value_t = 1_000_000)]
    pub rows: usize,
    /// Generator seed; defaults to `--seed`.
    #[arg(long)]
    pub data_seed: Option<u64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Flow,
    Hist,
}

#[derive(Args, Debug, Clone)]
pub struct EstimatorArgs {
    #[arg(long, value_enum, default_value_t = EstimatorKind::Flow)]
    pub estimator: EstimatorKind,
    /// Bins per dimension for the histogram.
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Histogram memory budget in bytes.
    #[arg(long)]
    pub memory_cap: Option<u64>,
    /// Flow training steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Flow mini-batch size.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Coupling layers.
    #[arg(long)]
    pub layers: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to the available cores).
    #[arg(long, env = "PHASEFOLD_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Train on a random subset of this size instead of every row.
    #[arg(long)]
    pub m: Option<usize>,
    /// Checkpoint path.
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectorKind {
    Acceptance,
    RawProduct,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Number of points to select.
    #[arg(long)]
    pub n: usize,
    /// Working-subset size (default: min(rows, 100000)).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub iters: usize,
    /// Calibration subsample size.
    #[arg(long)]
    pub nprime: Option<usize>,
    #[arg(long, value_enum, default_value_t = CorrectorKind::Acceptance)]
    pub corrector: CorrectorKind,
    /// Selected row indices, one per line.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Selected rows as a dataset.
    #[arg(long, value_name = "PATH")]
    pub selected: Option<PathBuf>,
    /// Run report (JSON).
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum RescaleMode {
    /// Rescaler fit on the parent dataset.
    Parent,
    /// Rescaler fit on each selection.
    Subset,
    None,
}

#[derive(Args, Debug)]
pub struct MetricArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Index file; repeat for an ensemble.
    #[arg(long, value_name = "PATH", required = true)]
    pub indices: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = RescaleMode::Parent)]
    pub rescale: RescaleMode,
    /// Nearest-neighbour distances of the first selection as CSV.
    #[arg(long, value_name = "PATH")]
    pub nn_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// random, stratified-k<K>, bruteforce-<ITERS> or binning-b<BINS>.
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Table1Ordering,
    Table2Dims,
    SweepM,
    SweepIters,
    Coverage,
    Scaling,
    ErrorCurves,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(value_enum)]
    pub experiment: Experiment,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Export selected rows of the first repetition of each cell.
    #[arg(long)]
    pub scatter: bool,
}

fn main() -> ExitCode {
    let argv = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("phasefold: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let res = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Sample(a) => commands::sample(&a),
        Command::Metric(a) => commands::metric(&a),
        Command::Baseline(a) => commands::baseline(&a),
        Command::Bench(a) => commands::bench(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("phasefold: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

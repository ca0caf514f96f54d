use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use elforensics::histogram::OutputFormat;
use elforensics::regional::Grouping;
use elforensics::synth::FraudTarget;
use elforensics::MetricKind;

mod commands;
mod manifest;

use commands::CliError;

/// Integer-percentage forensics for polling-station election results.
#[derive(Debug, Parser)]
#[command(name = "elforensics", version, about)]
struct Cli {
    /// Worker threads for parallel analyses (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check that a CSV file ingests cleanly in strict mode.
    Validate { input: PathBuf },
    /// Jittered percentage histogram as CSV or SVG.
    Histogram(HistogramArgs),
    /// Integer-percentage anomaly statistics for one or more elections.
    Anomaly(AnomalyArgs),
    /// Break the stations of one histogram bin down by region.
    Region(RegionArgs),
    /// Generate a synthetic election, optionally with injected fraud.
    Synth(SynthArgs),
    /// Look for regional clusters at a round leader share.
    ProductScan(ProductScanArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Skip malformed or inconsistent rows instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct HistogramArgs {
    pub input: PathBuf,
    /// Repeat for several series (SVG only).
    #[arg(long, default_value = "turnout")]
    pub metric: Vec<MetricKind>,
    #[arg(long, default_value_t = 0.1)]
    pub bin_width: f64,
    #[arg(long, default_value_t = 100)]
    pub jitter_draws: u32,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_jitter: bool,
    #[arg(long)]
    pub include_full_turnout: bool,
    #[arg(long, default_value_t = 0)]
    pub min_registered: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the extension of --out.
    #[arg(long)]
    pub format: Option<OutputFormat>,
    #[command(flatten)]
    pub input_args: InputArgs,
}

#[derive(Debug, Args)]
pub struct AnomalyArgs {
    /// Elections in series order.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub iterations: u32,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub integer_lo: u32,
    #[arg(long, default_value_t = 99)]
    pub integer_hi: u32,
    #[arg(long, default_value_t = 0.05)]
    pub halfwidth: f64,
    #[arg(long, default_value_t = 100)]
    pub jitter_draws: u32,
    #[arg(long)]
    pub no_jitter: bool,
    #[arg(long, default_value_t = 99.9)]
    pub percentile: f64,
    #[arg(long, default_value_t = 0)]
    pub min_registered: u64,
    /// Report JSON; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the per-election series table as CSV.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[command(flatten)]
    pub input_args: InputArgs,
}

#[derive(Debug, Args)]
pub struct RegionArgs {
    pub input: PathBuf,
    #[arg(long, default_value = "turnout")]
    pub metric: MetricKind,
    #[arg(long)]
    pub bin_center: f64,
    #[arg(long, default_value_t = 0.05)]
    pub halfwidth: f64,
    #[arg(long, default_value = "region")]
    pub group_by: Grouping,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub input_args: InputArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10_000)]
    pub stations: usize,
    #[arg(long, default_value_t = 1000.0)]
    pub median_registered: f64,
    #[arg(long, default_value_t = 0.7)]
    pub size_dispersion: f64,
    #[arg(long, default_value_t = 10)]
    pub min_registered: u64,
    #[arg(long, default_value_t = 5000)]
    pub max_registered: u64,
    #[arg(long, default_value_t = 20)]
    pub regions: u32,
    #[arg(long, default_value_t = 0.0)]
    pub fraud_fraction: f64,
    #[arg(long, default_value = "turnout")]
    pub target_metric: FraudTarget,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth labels, one row per station.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProductScanArgs {
    pub input: PathBuf,
    #[arg(long, default_value = "region")]
    pub group_by: Grouping,
    #[arg(long, default_value_t = 0.5)]
    pub round_step: f64,
    #[arg(long, default_value_t = 0.05)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 20)]
    pub min_cluster: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub input_args: InputArgs,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::io(format!("cannot start thread pool: {e}")))?;
    }
    match cli.command {
        Command::Validate { input } => commands::validate(&input),
        Command::Histogram(args) => commands::histogram(&args),
        Command::Anomaly(args) => commands::anomaly(&args),
        Command::Region(args) => commands::region(&args),
        Command::Synth(args) => commands::synth(&args),
        Command::ProductScan(args) => commands::product_scan(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

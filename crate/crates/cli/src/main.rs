//! `tension-sentinel`: synthesize, detrend, train, impute, diagnose and export plot data.
//!
//! Exit codes: 0 on success with no damage, 1 on any error (usage errors included),
//! 2 when `diagnose` flags at least one channel.

mod commands;
mod config;
mod plot;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tension_sentinel::ModelKind;

pub const THREADS_ENV: &str = "TENSION_SENTINEL_THREADS";

#[derive(Debug)]
pub struct CliError(String);

impl CliError {
    pub fn msg(text: impl Into<String>) -> Self {
        Self(text.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<tension_sentinel::Error> for CliError {
    fn from(e: tension_sentinel::Error) -> Self {
        Self(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "tension-sentinel", version, about = "Cable-tension imputation and damage detection")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for generation and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus CSV.
    Synth(SynthArgs),
    /// Split a corpus into a segment-median trend and the detrended remainder.
    Detrend(DetrendArgs),
    /// Train an autoencoder and write a checkpoint.
    Train(TrainArgs),
    /// Fill missing entries with model reconstructions (detrended units).
    Impute(ImputeArgs),
    /// Score channels against a healthy reference period.
    Diagnose(DiagnoseArgs),
    /// Export plot-ready CSV data.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Corpus CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus length, e.g. `86400`, `12h` or `4d`.
    #[arg(long, value_parser = config::parse_seconds)]
    pub duration: Option<f64>,
    /// Sampling rate in Hz.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Vehicle arrivals per second.
    #[arg(long)]
    pub traffic_rate: Option<f64>,
    /// `CABLE:START:REDUCTION`, repeatable.
    #[arg(long)]
    pub damage: Vec<String>,
    /// `CABLE:START:END`, repeatable.
    #[arg(long)]
    pub missing: Vec<String>,
}

#[derive(Args, Debug)]
pub struct DetrendArgs {
    /// Raw corpus CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Detrended CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Trend CSV to write.
    #[arg(long)]
    pub trend_out: PathBuf,
    /// Median segment length in seconds.
    #[arg(long)]
    pub segment_seconds: Option<f64>,
}

/// How input CSVs are interpreted.
#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Corpus CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// The data is already detrended.
    #[arg(long)]
    pub detrended: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training-loss CSV (iteration, loss, seconds).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// `lstm` or `dnn`.
    #[arg(long, value_parser = parse_kind)]
    pub model: Option<ModelKind>,
    /// Channels zeroed in each training window.
    #[arg(long)]
    pub drop_k: Option<usize>,
    /// Training iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Window length in samples.
    #[arg(long)]
    pub window: Option<usize>,
    /// `START:END` offsets from the first timestamp, e.g. `0:4d`.
    #[arg(long, value_parser = config::parse_period)]
    pub train_period: Option<(f64, f64)>,
}

#[derive(Args, Debug)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Imputed CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Channels to hide before imputing, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hide: Vec<String>,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Healthy reference period `START:END`, offsets from the first timestamp.
    #[arg(long, value_parser = config::parse_period)]
    pub baseline_period: Option<(f64, f64)>,
    /// Period to score; defaults to the whole series.
    #[arg(long, value_parser = config::parse_period)]
    pub eval_period: Option<(f64, f64)>,
    /// Damage report JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluation period with missing channels filled in (detrended units).
    #[arg(long)]
    pub imputed_out: Option<PathBuf>,
    /// Channels treated as missing in both periods, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub missing: Vec<String>,
    /// Scoring window in samples.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// Training loss curve from a train log.
    Loss,
    /// Final training loss against the number of dropped channels.
    Sweep,
    /// Hidden-channel truth against its imputation.
    Overlay,
    /// Per-channel z-scores from a damage report.
    Zbars,
    /// Kernel densities of per-window reconstruction error.
    Violin,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    /// CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Train log (`loss`) or damage report (`zbars`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Corpus CSV for `sweep`, `overlay` and `violin`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// The data is already detrended.
    #[arg(long)]
    pub detrended: bool,
    /// Checkpoint for `overlay` and `violin`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Channel to hide for `overlay`.
    #[arg(long)]
    pub channel: Option<String>,
    /// Channels blanked at input for `violin`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub missing: Vec<String>,
    /// Window length in samples for `violin`.
    #[arg(long)]
    pub window: Option<usize>,
    /// Models trained by `sweep`; both by default.
    #[arg(long, value_parser = parse_kind)]
    pub model: Option<ModelKind>,
    /// Training iterations per `sweep` point.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Window length for `sweep` training.
    #[arg(long)]
    pub train_window: Option<usize>,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: tension_sentinel::Error| e.to_string())
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(text) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::msg(format!("{THREADS_ENV} must be a positive integer, got `{text}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::msg(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    let outcome = configure_threads().and_then(|()| commands::run(&cli));
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

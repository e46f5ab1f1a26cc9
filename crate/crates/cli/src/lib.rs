//! Subcommands of the `codealign` executable.
//!
//! Exit codes: 0 on success, 1 when there was nothing to do or every item
//! failed, 2 for usage and configuration errors.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::FileConfig;

#[derive(Debug, Parser)]
#[command(
    name = "codealign",
    version,
    about = "Align live-coding program embeddings with audio embeddings"
)]
pub struct Cli {
    /// TOML configuration with optional [train], [sweep], [link], [synthetic] and [corpus] tables.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed; overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output on standard error (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    pub fn log_level(&self) -> log::LevelFilter {
        match (self.quiet, self.verbose) {
            (true, _) => log::LevelFilter::Warn,
            (false, 0) => log::LevelFilter::Info,
            (false, 1) => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render randomized programs from templates.
    GenCorpus(GenCorpusArgs),
    /// Submit rendered programs to a Sonic Pi server (or capture the packets).
    RenderAudio(RenderAudioArgs),
    /// Pair programs with recordings and embed both into a dataset file.
    Embed(EmbedArgs),
    /// Pairwise-similarity correlation study between the two modalities.
    Analyze(AnalyzeArgs),
    /// Train both projection heads and write run artifacts.
    Train(TrainArgs),
    /// Run the hyperparameter grid and write sweep.csv.
    Sweep(SweepArgs),
    /// Re-evaluate the checkpoints of a run directory.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// Directory of `*.pi.tpl` templates; the built-in set when omitted.
    #[arg(long, value_name = "DIR")]
    pub templates: Option<PathBuf>,
    /// Parameter-space TOML; the built-in space when omitted.
    #[arg(long, value_name = "FILE")]
    pub params: Option<PathBuf>,
    /// Variants rendered per template.
    #[arg(long)]
    pub per_template: Option<usize>,
    /// Output directory for `.pi` files and manifest.jsonl.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderAudioArgs {
    /// Corpus directory containing manifest.jsonl.
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    /// Directory for recordings, `.osc` captures and the render report.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Server address as host:port.
    #[arg(long, env = "CODEALIGN_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Write each packet to `<name>.osc` instead of sending it.
    #[arg(long)]
    pub dry_run: bool,
    /// Recording window per program, in seconds.
    #[arg(long, default_value_t = codealign::soniclink::DEFAULT_RECORD_SECONDS)]
    pub record_seconds: f64,
    /// OSC address that runs code on the server.
    #[arg(long)]
    pub osc_address: Option<String>,
    /// Integer token prepended to each message.
    #[arg(long)]
    pub token: Option<i32>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Directory of `.pi` programs.
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    /// Directory of `<stem>.wav` recordings and optional `<stem>.embedding.json` sidecars.
    #[arg(long, value_name = "DIR")]
    pub wavs: PathBuf,
    /// Output dataset file (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Dataset file (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    /// Output CSV with one row per record pair.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Optional JSON file for the correlation summary.
    #[arg(long, value_name = "FILE")]
    pub summary: Option<PathBuf>,
    /// Permutation trials per p-value.
    #[arg(long, default_value_t = codealign::metrics::DEFAULT_PERMUTATION_TRIALS)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct DataSource {
    /// Dataset file (JSON lines).
    #[arg(
        long,
        value_name = "FILE",
        required_unless_present = "synthetic",
        conflicts_with = "synthetic"
    )]
    pub dataset: Option<PathBuf>,
    /// Use a generated dataset with known ground truth instead of a file.
    #[arg(long)]
    pub synthetic: bool,
}

#[derive(Debug, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub d_hidden: Option<usize>,
    #[arg(long)]
    pub d_out: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Average the code→audio and audio→code losses.
    #[arg(long)]
    pub symmetric: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: DataSource,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    /// Run directory for config, history, checkpoints and metrics.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: DataSource,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    /// Runs per grid point.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Directory for sweep.csv and sweep.txt.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long, value_name = "DIR")]
    pub run: PathBuf,
    #[command(flatten)]
    pub source: DataSource,
    /// Metrics output; `<run>/eval_metrics.json` when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// A failed command and its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or input files (exit 2).
    Usage(String),
    /// Nothing to do, or all work failed (exit 1).
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

/// Runs the parsed command line.
pub fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = FileConfig::load(cli.config.as_deref(), cli.seed)?;
    match &cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(a, &cfg),
        Command::RenderAudio(a) => commands::render_audio(a, &cfg),
        Command::Embed(a) => commands::embed(a),
        Command::Analyze(a) => commands::analyze(a, &cfg),
        Command::Train(a) => commands::train(a, &cfg),
        Command::Sweep(a) => commands::sweep(a, &cfg),
        Command::Eval(a) => commands::eval(a, &cfg),
    }
}

//! The `ssp` command-line pipeline: synthetic scenes, preprocessing, training, embedding,
//! partitioning, evaluation, sweeps and baselines.

pub mod cache;
pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::PipelineConfig;

#[derive(Debug)]
pub enum CliError {
    /// bad flags or arguments
    Usage(String),
    /// unreadable or invalid configuration file
    Config(String),
    /// input data could not be read, or the pipeline failed on it
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error[usage]: {m}"),
            CliError::Config(m) => write!(f, "error[config]: {m}"),
            CliError::Data(m) => write!(f, "error[data]: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ssp_core::Error> for CliError {
    fn from(e: ssp_core::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ssp",
    version,
    about = "Supervised superpoint generation for point clouds"
)]
pub struct Cli {
    /// key = value file overriding the defaults
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// seed for scene generation, initialization and sampling
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// deterministic execution; every run is single-threaded and seeded, so this is the
    /// only mode and the flag is accepted for scripts
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// progress messages on standard error
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write labeled synthetic indoor scenes as PLY files
    Synth(SynthArgs),
    /// Subsample a PLY cloud and cache its neighborhoods and adjacency graph
    Prep(PrepArgs),
    /// Train an embedder on labeled clouds
    Train(TrainArgs),
    /// Embed a cloud and write the embeddings as colors
    Embed(EmbedArgs),
    /// Partition a cloud into superpoints with a trained embedder
    Partition(PartitionArgs),
    /// Score a partition against the ground truth
    Eval(EvalArgs),
    /// Metrics over a range of regularization strengths
    Sweep(SweepArgs),
    /// Partition a cloud from colors or handcrafted geometric features
    Baseline(BaselineArgs),
    /// Print the effective configuration
    Config,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    /// PLY cloud
    #[arg(long)]
    pub input: PathBuf,
    /// cache file to write
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// prepared caches or PLY clouds with object ids
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// weight file to write
    #[arg(long)]
    pub out: PathBuf,
    /// checkpoint written after every epoch
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// continue from this checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// per-epoch loss CSV
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// PLY with embedding colors
    #[arg(long)]
    pub out: PathBuf,
    /// raw embeddings as CSV
    #[arg(long)]
    pub raw: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// PLY with superpoint ids and embedding colors
    #[arg(long)]
    pub out: PathBuf,
    /// JSON summary
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// overrides `lambda_tilde` from the config
    #[arg(long)]
    pub lambda_tilde: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// labeled cloud the partition was computed on
    #[arg(long)]
    pub data: PathBuf,
    /// PLY with a superpoint property
    #[arg(long)]
    pub partition: PathBuf,
    /// recorded in the report
    #[arg(long)]
    pub lambda_tilde: Option<f64>,
    /// JSON report; standard output when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(
        long,
        conflicts_with = "baseline",
        required_unless_present = "baseline"
    )]
    pub model: Option<PathBuf>,
    /// raw or geometry
    #[arg(long)]
    pub baseline: Option<String>,
    /// comma-separated regularization strengths
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambdas: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// raw or geometry
    #[arg(long)]
    pub mode: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// search the regularization strength for about this many superpoints (±10%)
    #[arg(long)]
    pub match_count: Option<usize>,
    #[arg(long)]
    pub lambda_tilde: Option<f64>,
}

/// Parses `argv`, runs the command and returns the process exit code. Errors go to
/// standard error as one line with an `error[kind]:` prefix.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()));
            return 1;
        }
    };
    let level = if cli.verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match commands::execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

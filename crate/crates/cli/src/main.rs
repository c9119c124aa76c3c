//! `neuromon` command-line tool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use neuromon::{Error, Level};

use crate::config::RunConfig;

/// Streaming reasoning-failure monitor: simulate traces, train detectors,
/// monitor streams, select expert neurons and build fine-tuning corpora.
///
/// Exit codes: 0 success, 1 other failure, 2 invalid input or configuration,
/// 3 training failure, 4 probe-set mismatch, 5 stream protocol violation.
///
/// Every configuration key can be set in the TOML file, with
/// `--set section.key=value`, or with `NEUROMON_SECTION__KEY=value`.
#[derive(Debug, Parser)]
#[command(name = "neuromon", version, max_term_width = 100)]
struct Cli {
    /// TOML configuration file with [monitor], [train], [corpus], [reconstruct] and [bench] sections.
    #[arg(long, global = true, env = "NEUROMON_CONFIG", value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one configuration key; repeatable, applied after the file and the environment.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,

    /// Log more to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic trace, or a whole corpus from [corpus].
    Simulate(SimulateArgs),
    /// Dump per-window spectral features of a trace as CSV.
    Features(FeaturesArgs),
    /// Train detectors on simulated or recorded traces.
    Train(TrainArgs),
    /// Replay a trace or serve live streams through the detectors.
    Monitor(MonitorArgs),
    /// Measure per-token update and detection cost across window lengths.
    Bench(BenchArgs),
    /// Select a level's expert neuron cluster from attribution scores.
    SelectMon(SelectMonArgs),
    /// Build a trigger-annotated fine-tuning corpus from raw reasoning samples.
    Reconstruct(ReconstructArgs),
    /// Print the resolved configuration as TOML.
    Config,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Binary,
    Jsonl,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Trace spec (JSON, or TOML with a .toml extension); defaults are used when absent.
    #[arg(long, value_name = "PATH", conflicts_with = "corpus")]
    spec: Option<PathBuf>,
    /// Generate the [corpus] population into the directory given by --out.
    #[arg(long)]
    corpus: bool,
    /// Output trace file, or a new directory with --corpus.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Trace encoding; by default chosen from the file extension (.jsonl is text).
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    /// Trace to analyse.
    #[arg(long, value_name = "PATH")]
    trace: PathBuf,
    /// Output CSV, one row per evaluated window and level.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LevelArg {
    Intra,
    Inter,
    Inst,
    All,
}

impl LevelArg {
    fn levels(self) -> Vec<Level> {
        match self {
            LevelArg::Intra => vec![Level::Intra],
            LevelArg::Inter => vec![Level::Inter],
            LevelArg::Inst => vec![Level::Inst],
            LevelArg::All => Level::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Detector level to train.
    #[arg(long, value_enum, default_value = "all")]
    level: LevelArg,
    /// Directory of labeled traces (with .labels.json sidecars); simulates [corpus] when absent.
    #[arg(long, value_name = "DIR")]
    traces: Option<PathBuf>,
    /// Model file for a single level, or a directory receiving <level>.mlp files.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Also write the training reports as JSON.
    #[arg(long, value_name = "PATH")]
    metrics: Option<PathBuf>,
    /// Check analytic gradients against central differences (eps 1e-5); fail above 1e-4.
    #[arg(long)]
    grad_check: bool,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["replay", "listen"]))]
struct MonitorArgs {
    /// Trace file to replay.
    #[arg(long, value_name = "PATH")]
    replay: Option<PathBuf>,
    /// Address to accept streams on, e.g. 127.0.0.1:7070 (port 0 picks one).
    #[arg(long, value_name = "ADDR")]
    listen: Option<String>,
    /// Directory holding intra.mlp, inter.mlp and/or inst.mlp.
    #[arg(long, value_name = "DIR")]
    models: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    intra_model: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    inter_model: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    inst_model: Option<PathBuf>,
    /// Event log (JSON lines).
    #[arg(long, value_name = "PATH", default_value = "events.jsonl")]
    log: PathBuf,
    /// Write per-window features as CSV (replay only).
    #[arg(long, value_name = "PATH", requires = "replay")]
    dump_features: Option<PathBuf>,
    /// Label sidecar to score events against; defaults to the trace's sidecar if present.
    #[arg(long, value_name = "PATH", requires = "replay")]
    labels: Option<PathBuf>,
    /// Stop after this many sessions have ended (listen only).
    #[arg(long, value_name = "N", requires = "listen")]
    sessions: Option<usize>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Report file: JSON for .json, CSV otherwise.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectMonArgs {
    /// Attribution scores (.bin binary, anything else CSV text).
    #[arg(long, value_name = "PATH")]
    scores: PathBuf,
    /// Top-k cut per step.
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "intra")]
    level: LevelArg,
    /// Selection as JSON.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    /// Raw samples, JSON lines with input, output and optional id.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Corpus file; the report goes to <stem>.report.json beside it.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// JSON template set replacing the built-in p/d/c blocks.
    #[arg(long, value_name = "PATH")]
    templates: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::InvalidInput(_)
        | Error::Parse { .. }
        | Error::Shape { .. }
        | Error::DegenerateWindow { .. }
        | Error::ModelFormat(_) => 2,
        Error::Training(_) => 3,
        Error::ProbeMismatch { .. } => 4,
        Error::Protocol(_) | Error::Frame { .. } => 5,
        _ => 1,
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).with_target(false).init();
}

fn run(cli: Cli) -> neuromon::Result<()> {
    let config = RunConfig::resolve(cli.config.as_deref(), std::env::vars(), &cli.sets)?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(&config, a),
        Command::Features(a) => commands::features(&config, a),
        Command::Train(a) => commands::train(&config, a),
        Command::Monitor(a) => commands::monitor(&config, a),
        Command::Bench(a) => commands::bench(&config, a),
        Command::SelectMon(a) => commands::select_mon(a),
        Command::Reconstruct(a) => commands::reconstruct(&config, a),
        Command::Config => {
            print!("{}", config.to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "ctdg-embed", version, about = "Streaming node embeddings for continuous-time dynamic graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit histogram bins on the training prefix of a stream.
    FitBins(FitBinsArgs),
    /// Stream events through the engine and write embeddings.
    Run(RunArgs),
    /// Check the engine against its reference oracles on synthetic data.
    Verify(VerifyArgs),
    /// Measure per-edge latency across graph sizes.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct FitBinsArgs {
    #[arg(long)]
    pub stream: PathBuf,
    /// Run configuration (TOML) providing the schema.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub n_bins: usize,
    #[arg(long, default_value_t = 64)]
    pub max_categories: usize,
    /// Fit on the first fraction of events (default 1.0).
    #[arg(long, conflicts_with = "cutoff")]
    pub train_fraction: Option<f64>,
    /// Fit on events with timestamp strictly below this value.
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Where to write the bins (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Emit {
    PerEvent,
    Final,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    /// Bins file from fit-bins; overrides bins embedded in the config.
    #[arg(long)]
    pub bins: Option<PathBuf>,
    /// Embedding table (CSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Keep random projections instead of full histograms.
    #[arg(long)]
    pub sketch: bool,
    /// Number of projections.
    #[arg(long)]
    pub k: Option<usize>,
    /// Seed of the projection planes.
    #[arg(long)]
    pub seed: Option<u64>,
    /// In per-event mode, one row with source then destination embedding.
    #[arg(long)]
    pub pair_embeddings: bool,
    #[arg(long, value_enum)]
    pub emit: Option<Emit>,
    /// Append raw in/out degrees to every embedding.
    #[arg(long)]
    pub append_degrees: bool,
    /// Write a snapshot of the final state here.
    #[arg(long)]
    pub snapshot_out: Option<PathBuf>,
    /// Continue from a snapshot; the stream holds the events that follow it.
    #[arg(long)]
    pub resume_from: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Chain,
    Replay,
    Sketch,
    Walks,
    Normalization,
    All,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = SuiteArg::All)]
    pub suite: SuiteArg,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Longest chain checked.
    #[arg(long, default_value_t = 20)]
    pub chain_max_len: usize,
    #[arg(long, default_value_t = 500)]
    pub replay_nodes: usize,
    #[arg(long, default_value_t = 10_000)]
    pub replay_events: usize,
    #[arg(long, default_value_t = 5)]
    pub checkpoints: usize,
    #[arg(long, default_value_t = 10_000)]
    pub sketch_events: usize,
    #[arg(long, default_value_t = 16)]
    pub sketch_k: usize,
    /// Walks sampled on the star fixture.
    #[arg(long, default_value_t = 100_000)]
    pub walks: usize,
    #[arg(long, default_value_t = 1_000)]
    pub normalization_nodes: usize,
    #[arg(long, default_value_t = 100_000)]
    pub normalization_events: usize,
    /// Write the suite table (CSV) here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write the per-node engine vs walk divergence table (CSV) here.
    #[arg(long)]
    pub approximation_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Graph sizes (node counts), smallest first.
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 40_000)]
    pub events: usize,
    #[arg(long, default_value_t = 5_000)]
    pub warmup: usize,
    #[arg(long, default_value_t = 10)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Latency table (CSV).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::FitBins(a) => commands::fit_bins(a),
        Command::Run(a) => commands::run(a),
        Command::Verify(a) => commands::verify(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain, skipping causes already spelled out by an outer
/// message.
fn render(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

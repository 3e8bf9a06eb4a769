//! `qtrack` binary: batch pipeline for synthetic/TrackML event generation,
//! doublet-graph building, hybrid GNN training, and reporting.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qtrack::cli::{
    cmd_build_graphs, cmd_evaluate, cmd_ingest, cmd_report, cmd_synth, cmd_train, RunConfig,
};
use qtrack::Result;

#[derive(Parser)]
#[command(name = "qtrack", version, about = "Hybrid quantum-classical GNN for particle track segment classification")]
struct Args {
    /// Configuration file (flat `key = value`; see `qtrack config`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key, repeatable: --set key=value.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Worker threads (overrides the `threads` key; 0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic events into <out_dir>/events.
    Synth,
    /// Re-serialize TrackML CSV triplets from data_dir into <out_dir>/events.
    Ingest,
    /// Build one doublet graph per event plus aggregate statistics.
    BuildGraphs,
    /// K-fold training of the configured variant on the built graphs.
    Train,
    /// Score a checkpoint against the built graphs.
    Evaluate {
        /// Checkpoint JSON written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Merge per-variant training summaries into a comparison table.
    Report,
    /// Print the configuration key table with defaults.
    Config,
}

fn run(args: &Args) -> Result<String> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for pair in &args.overrides {
        config.apply_override(pair)?;
    }
    let threads = match args.threads {
        Some(t) => t,
        None => config.threads()?,
    };
    if threads > 0 {
        // Ignore failure: the global pool may already exist in-process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match &args.command {
        Command::Synth => cmd_synth(&config),
        Command::Ingest => cmd_ingest(&config),
        Command::BuildGraphs => cmd_build_graphs(&config),
        Command::Train => cmd_train(&config),
        Command::Evaluate { checkpoint } => cmd_evaluate(&config, checkpoint),
        Command::Report => cmd_report(&config),
        Command::Config => Ok(RunConfig::schema()),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(message) => {
            println!("{message}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

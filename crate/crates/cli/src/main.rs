use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mcrd_cli::commands::{self, TrainArgs};
use mcrd_cli::server;
use mcrd_core::synth::SynthConfig;
use mcrd_core::{EvalReport, PriorKind, QueryRequest};
use tracing_subscriber::EnvFilter;

/// Multi-channel reverse dictionary: find a word from its description.
#[derive(Parser)]
#[command(name = "mcrd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output checkpoint (default: the config path with a .mcrd extension).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Per-epoch JSONL log (default: next to the checkpoint).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from this checkpoint instead of initializing.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a `word<TAB>definition` test set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        testset: PathBuf,
        /// pos, initial-letter or length
        #[arg(long)]
        prior: Option<PriorKind>,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Look up words for a description.
    Query {
        #[arg(long)]
        checkpoint: PathBuf,
        description: String,
        #[command(flatten)]
        filters: Filters,
        #[arg(long)]
        json: bool,
    },
    /// Serve POST /query and GET /health.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Write a synthetic toy corpus and a training config for it.
    Toy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON generator settings; unspecified fields take defaults.
        #[arg(long)]
        synth: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Filters {
    #[arg(long, default_value_t = mcrd_core::query::DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long)]
    pos: Option<String>,
    #[arg(long)]
    initial_letter: Option<String>,
    #[arg(long)]
    word_length: Option<usize>,
}

fn init_logging() {
    let filter = EnvFilter::try_from_env("MCRD_LOG").unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn print_report(label: &str, report: &EvalReport, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(report)?);
    } else {
        print!("{}", report.table(label));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            checkpoint,
            log,
            seed,
            epochs,
            resume,
        } => {
            let path = commands::train(TrainArgs {
                config,
                checkpoint,
                log,
                seed,
                epochs,
                resume,
            })?;
            println!("{}", path.display());
        }
        Command::Eval {
            checkpoint,
            testset,
            prior,
            json,
        } => {
            let (label, report) = commands::eval(&checkpoint, &testset, prior)?;
            print_report(&label, &report, json)?;
        }
        Command::Query {
            checkpoint,
            description,
            filters,
            json,
        } => {
            let request = QueryRequest {
                description,
                top_k: filters.top_k,
                pos: filters.pos,
                initial_letter: filters.initial_letter,
                word_length: filters.word_length,
            };
            let response = commands::query(&checkpoint, &request)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&response)?);
            } else {
                print!("{}", commands::render(&response));
            }
        }
        Command::Serve { checkpoint, bind } => {
            let engine = Arc::new(commands::load_engine(&checkpoint)?);
            tokio::runtime::Runtime::new()?.block_on(server::serve(engine, bind))?;
        }
        Command::Toy { out, seed, synth } => {
            let mut config = match synth {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("invalid generator settings {}", path.display()))?
                }
                None => SynthConfig::default(),
            };
            if let Some(seed) = seed {
                config.seed = seed;
            }
            println!("{}", commands::toy(&out, config)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

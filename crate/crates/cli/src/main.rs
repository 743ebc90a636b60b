mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "presize", version, about = "Purchase-history size prediction")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset directory.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Model file, or the resumable training checkpoint for `train`.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long = "history-len", global = true)]
    history_len: Option<usize>,
    /// Attribute name, `temporal` or `all-context`.
    #[arg(long, global = true, conflicts_with = "keep_only")]
    remove: Option<String>,
    #[arg(long = "keep-only", global = true)]
    keep_only: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with its ground truth.
    GenData,
    /// Learn a byte-pair vocabulary from the training-period item text.
    TokenizerTrain,
    /// Train a model.
    Train {
        /// Continue from the training checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a model or a baseline on the test split.
    Evaluate {
        /// mcv, mrv or pmcv.
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Train and evaluate remove-one and keep-one variants.
    Ablate,
    /// Train and evaluate across embedding dimensions and history caps.
    Sweep,
    /// Precompute unmasked item embeddings.
    EmbedItems,
    /// Export ranking features for the test split.
    Features {
        /// Embedding cache to use for history items.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Size distribution for one buyer and item.
    Predict {
        #[arg(long)]
        buyer: String,
        #[arg(long)]
        item: String,
        #[arg(long)]
        day: u32,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let c = &cli.common;
    let overrides = Overrides {
        seed: c.seed,
        data: c.data.clone(),
        dim: c.dim,
        history_len: c.history_len,
        remove: c.remove.clone(),
        keep_only: c.keep_only.clone(),
    };
    let cfg = RunConfig::load(c.config.as_deref(), &overrides)?;
    let out = c.out.as_deref();
    let ckpt = c.checkpoint.as_deref();
    match &cli.command {
        Command::GenData => commands::gen_data(&cfg, out),
        Command::TokenizerTrain => commands::tokenizer_train(&cfg, out),
        Command::Train { resume } => commands::train(&cfg, out, ckpt, *resume),
        Command::Evaluate { baseline } => commands::evaluate(&cfg, ckpt, baseline.as_deref(), out),
        Command::Ablate => commands::ablate(&cfg, out, overrides.remove.is_some() || overrides.keep_only.is_some()),
        Command::Sweep => commands::sweep(&cfg, out),
        Command::EmbedItems => commands::embed_items(&cfg, ckpt, out),
        Command::Features { cache } => commands::features(&cfg, ckpt, cache.as_deref(), out),
        Command::Predict { buyer, item, day } => commands::predict(&cfg, ckpt, buyer, item, *day, out),
    }
}

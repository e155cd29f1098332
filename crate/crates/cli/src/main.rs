//! `codemix` command-line entry point.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "codemix", version, about = "Code-mixed language modeling laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Record wall-clock times in reports
    #[arg(long)]
    timings: bool,
}

#[derive(Subcommand)]
enum Command {
    /// CMI histogram and Heaps curve of a corpus
    Analyze(Common),
    /// Generate a synthetic tagged corpus
    Synth(Common),
    /// Train a causal language model
    TrainLm(Common),
    /// Perplexity by CMI bucket
    EvalPpl(Common),
    /// Train a sentiment classifier
    TrainSa(Common),
    /// Macro F1 of a sentiment classifier
    EvalSa(Common),
    /// Train a translation model
    TrainMt(Common),
    /// BLEU of a translation model
    EvalMt(Common),
    /// Train one model per positional encoding and tabulate the metric
    ComparePe(Common),
    /// Attention matrix of one layer and head
    DumpAttention(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (common, f): (&Common, fn(&commands::Run) -> Result<(), CliError>) = match &cli.command {
        Command::Analyze(c) => (c, commands::analyze),
        Command::Synth(c) => (c, commands::synth),
        Command::TrainLm(c) => (c, commands::train_lm_cmd),
        Command::EvalPpl(c) => (c, commands::eval_ppl),
        Command::TrainSa(c) => (c, commands::train_sa),
        Command::EvalSa(c) => (c, commands::eval_sa),
        Command::TrainMt(c) => (c, commands::train_mt_cmd),
        Command::EvalMt(c) => (c, commands::eval_mt),
        Command::ComparePe(c) => (c, commands::compare_pe),
        Command::DumpAttention(c) => (c, commands::dump_attention),
    };
    let (cfg, hash) = RunConfig::load(&common.config, common.seed)?;
    cfg.data.check_inputs()?;
    f(&commands::Run::new(cfg, hash, common.out.clone(), common.timings))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("codemix: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

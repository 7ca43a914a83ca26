use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mgeal_core::Strategy;

mod commands;
mod output;

/// Active-learning simulator for multi-label classification.
#[derive(Debug, Parser)]
#[command(name = "mgeal", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (TOML). Missing keys take reference values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true, env = "MGEAL_OUTPUT_DIR")]
    pub out: Option<PathBuf>,

    /// Comma-separated run seeds; overrides `seeds` from the config.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,

    /// Worker threads for independent runs (0 = all cores).
    #[arg(long, global = true, env = "MGEAL_JOBS", default_value_t = 0)]
    pub jobs: usize,

    /// Dataset CSV; overrides `dataset` from the config.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic dataset as CSV and print class frequencies.
    Generate,
    /// Pre-train an encoder with BYOL on the pool split.
    Pretrain,
    /// Run one strategy for every seed and summarise the curves.
    Run {
        /// Strategy to run; defaults to the first entry of `strategies`.
        #[arg(long)]
        strategy: Option<Strategy>,
    },
    /// Run every strategy on every scenario pool with paired seeds.
    Compare,
    /// Rebuild the curve tables from run logs.
    Report {
        /// Directory searched recursively for `.jsonl` run logs; defaults to the output directory.
        input: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate => commands::generate(&cli.common),
        Command::Pretrain => commands::pretrain(&cli.common),
        Command::Run { strategy } => commands::run(&cli.common, strategy),
        Command::Compare => commands::compare(&cli.common),
        Command::Report { input } => commands::report(&cli.common, input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! `ragsel`: rationale-driven evidence selection for retrieval-augmented
//! generation, as a batch pipeline.
//!
//! Every subcommand reads one TOML configuration (`--config`), optionally
//! adjusted by `--set key=value` overrides, and writes its artifacts plus a
//! provenance manifest into the output directory. Successful runs print a
//! single JSON status line to stdout; failures print
//! `{"command": ..., "error": ...}` to stderr and exit 1 (usage errors keep
//! clap's diagnostics and exit 2).

mod config;
mod manifest;
mod providers;

pub mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};

use commands::{cmd_build_prefs, cmd_chunk, cmd_eval, cmd_poison, cmd_select, Ctx};
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "ragsel",
    version,
    about = "Rationale-driven evidence selection for retrieval-augmented generation",
    arg_required_else_help = true
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory (overrides `output.dir`; created if missing).
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,

    /// Base random seed (overrides `run.seed`).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads for per-query work (overrides `run.workers`).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Override one config field, e.g. `--set selection.tau=2.0`. Repeatable;
    /// later overrides win. Values parse as TOML, falling back to strings.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Split documents into fixed-size chunks.
    Chunk,
    /// Generate rationales, select evidence, and (optionally) verify it.
    Select,
    /// Inject adversarial chunks next to gold evidence.
    Poison,
    /// Score a selection run and assemble the evaluation report.
    Eval,
    /// Build preference pairs for tuning the rationale generator.
    BuildPrefs,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Chunk => "chunk",
            Command::Select => "select",
            Command::Poison => "poison",
            Command::Eval => "eval",
            Command::BuildPrefs => "build-prefs",
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let command = cli.command;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let envelope = serde_json::json!({
                "command": command.name(),
                "error": format!("{err:#}"),
            });
            eprintln!("{envelope}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config_path = cli.config.ok_or_else(|| {
        anyhow!("a configuration file is required: pass --config <FILE>")
    })?;

    // Dedicated flags are just overrides with reserved spellings; they are
    // applied after `--set` so the flag always wins.
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    if let Some(workers) = cli.workers {
        overrides.push(format!("run.workers={workers}"));
    }

    let loaded = RunConfig::load(&config_path, &overrides)?;
    // `--output` is resolved against the caller's working directory, unlike
    // config paths (which resolve against the config file). It is excluded
    // from the digest either way.
    let out_dir = match cli.output {
        Some(dir) => {
            if dir.is_relative() {
                std::env::current_dir()?.join(dir)
            } else {
                dir
            }
        }
        None => loaded.config.output.dir.clone(),
    };

    let ctx = Ctx { config: &loaded.config, digest: &loaded.digest, out_dir: &out_dir };
    match cli.command {
        Command::Chunk => cmd_chunk(&ctx),
        Command::Select => cmd_select(&ctx),
        Command::Poison => cmd_poison(&ctx),
        Command::Eval => cmd_eval(&ctx),
        Command::BuildPrefs => cmd_build_prefs(&ctx),
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use llmael_cli::commands;
use llmael_cli::config::{Overrides, Settings};
use llmael_core::ensemble::VoteMethod;

/// Augment mention contexts with generated descriptions, link them, and
/// score the result.
#[derive(Parser)]
#[command(name = "llmael", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline manifest (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Context-joining strategy, 0 to 4.
    #[arg(long, global = true)]
    strategy: Option<u8>,
    /// `baseline`, or the URL of a linking service.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// `mock` or `http`.
    #[arg(long, global = true)]
    provider: Option<String>,
    /// Completion cache file.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    /// Truncate fused contexts to this many characters.
    #[arg(long, global = true)]
    max_chars: Option<usize>,
    /// Score NIL mentions too.
    #[arg(long, global = true)]
    include_nil: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a description for every mention.
    Augment,
    /// Join contexts and descriptions.
    Fuse,
    /// Link fused (or original) contexts.
    Link {
        /// Link the unaugmented contexts instead.
        #[arg(long)]
        original: bool,
    },
    /// Combine prediction files by voting.
    Vote {
        #[arg(long, default_value = "hard")]
        method: VoteMethod,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Score prediction runs (e.g. `s4`, `original`).
    Eval {
        #[arg(long = "system")]
        systems: Vec<String>,
    },
    /// Accuracy by entity frequency.
    Buckets {
        #[arg(long)]
        system: Option<String>,
    },
    /// Build fused training splits.
    MakeTrain,
    /// augment, fuse, link and eval in one go.
    Run,
}

impl Global {
    fn settings(&self) -> Result<Settings> {
        let path = self
            .config
            .as_ref()
            .context("this command needs --config")?;
        let overrides = Overrides {
            strategy: self.strategy,
            backend: self.backend.clone(),
            provider: self.provider.clone(),
            cache: self.cache.clone(),
            out: self.out.clone(),
            top_k: self.top_k,
            max_chars: self.max_chars,
            include_nil: self.include_nil,
        };
        Ok(Settings::from_file(path, &overrides)?)
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Vote {
            method,
            output,
            inputs,
        } => commands::vote(method, &inputs, &output),
        Command::Augment => {
            let s = commands::augment(&cli.global.settings()?)?;
            println!(
                "{} mentions, {} generated, {} from cache",
                s.mentions, s.generated, s.cache_hits
            );
            Ok(())
        }
        Command::Fuse => print_paths(commands::fuse(&cli.global.settings()?)?),
        Command::Link { original } => {
            print_paths(commands::link(&cli.global.settings()?, original)?)
        }
        Command::Eval { systems } => {
            print!("{}", commands::eval(&cli.global.settings()?, &systems)?);
            Ok(())
        }
        Command::Buckets { system } => {
            print!(
                "{}",
                commands::buckets(&cli.global.settings()?, system.as_deref())?
            );
            Ok(())
        }
        Command::MakeTrain => print_paths(commands::make_train(&cli.global.settings()?)?),
        Command::Run => {
            print!("{}", commands::run(&cli.global.settings()?)?);
            Ok(())
        }
    }
}

fn print_paths(paths: Vec<PathBuf>) -> Result<()> {
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

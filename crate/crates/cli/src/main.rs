use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use lmtx_cli::{run, CliError, Command, RunConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    /// Validate datasets and write normalized copies.
    Ingest,
    /// Run the teacher-in-the-loop training cycles.
    Train,
    /// Write top-m predictions for the test documents.
    Infer,
    /// Score predictions against the test ground truth.
    Eval,
    /// Summarize the judgment cache.
    CacheStats,
    /// Generate the synthetic benchmark corpus.
    Synth,
    /// Train, infer and evaluate at several shortlist sizes.
    Sweep,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Ingest => Command::Ingest,
            Cmd::Train => Command::Train,
            Cmd::Infer => Command::Infer,
            Cmd::Eval => Command::Eval,
            Cmd::CacheStats => Command::CacheStats,
            Cmd::Synth => Command::Synth,
            Cmd::Sweep => Command::Sweep,
        }
    }
}

/// Zero-shot extreme multi-label classification with a relevance teacher.
#[derive(Debug, Parser)]
#[command(name = "lmtx", version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// Flat key = value configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

fn init_threads(n: usize) -> anyhow::Result<()> {
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.to_string().lines().next().unwrap_or("").to_string());
            eprintln!("{}", err.record());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    let result = RunConfig::load(args.config.as_deref(), &args.overrides)
        .map_err(CliError::from)
        .and_then(|cfg| {
            if args.print_config {
                print!("{}", cfg.render());
                return Ok(());
            }
            init_threads(cfg.threads).map_err(|e| CliError::Usage(format!("{e:#}")))?;
            run(args.command.into(), &cfg)
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gradlab_cli::commands;
use gradlab_cli::config::{emit_reference, parse_config, RunConfig};
use gradlab_cli::error::Result;

#[derive(Parser)]
#[command(
    name = "gradlab",
    about = "Desk-scale ConvNet training and optimizer benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Override the config's master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the config's epoch budget
    #[arg(long)]
    max_epochs: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.clone();
        }
        if let Some(epochs) = self.max_epochs {
            cfg.max_epochs = epochs;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train per the config; writes metrics.csv and checkpoint.glb
    Train {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint on the config's test split
    Eval {
        config: PathBuf,
        checkpoint: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Finite-difference check of the configured architecture
    /// (exit 0 pass, 1 fail, 2 usage error)
    Gradcheck {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Optimizer battery over the analytic test functions;
    /// writes trajectory CSVs and a convergence summary
    Bench {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print the annotated default configuration reference
    Defaults,
}

fn load(config: &std::path::Path, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = parse_config(config)?;
    overrides.apply(&mut cfg);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Train { config, overrides } => {
            commands::run_train(&load(&config, &overrides)?)?;
            Ok(0)
        }
        Command::Eval {
            config,
            checkpoint,
            overrides,
        } => {
            commands::run_eval(&load(&config, &overrides)?, &checkpoint)?;
            Ok(0)
        }
        Command::Gradcheck { config, overrides } => {
            let pass = commands::run_gradcheck(&load(&config, &overrides)?)?;
            Ok(if pass { 0 } else { 1 })
        }
        Command::Bench { config, overrides } => {
            commands::run_bench(&load(&config, &overrides)?)?;
            Ok(0)
        }
        Command::Defaults => {
            print!("{}", emit_reference());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

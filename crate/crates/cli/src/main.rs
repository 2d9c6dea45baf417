//! `demogen`: capture scripted sources, generate datasets from them, replay
//! them in the simulator, evaluate a replay policy and add augmentations.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{
    resolve, AugmentConfig, CaptureConfig, EvaluateConfig, GenerateConfig, ValidateConfig,
};

#[derive(Parser)]
#[command(name = "demogen", version, about)]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print a JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record scripted source demonstrations.
    Capture(CaptureConfig),
    /// Generate a dataset from source demonstrations and a generation spec.
    Generate(GenerateConfig),
    /// Replay every demonstration of a dataset in the simulator.
    Validate(ValidateConfig),
    /// Grid evaluation of the nearest-demonstration replay policy.
    Evaluate(EvaluateConfig),
    /// Disturbance or obstacle augmentation of a dataset.
    Augment(AugmentConfig),
}

fn run(cli: &Cli) -> anyhow::Result<commands::Report> {
    let file = cli.config.as_deref();
    match &cli.command {
        Command::Capture(c) => commands::capture(&resolve(c, file)?),
        Command::Generate(c) => commands::generate(&resolve(c, file)?),
        Command::Validate(c) => commands::validate_dataset(&resolve(c, file)?),
        Command::Evaluate(c) => commands::evaluate(&resolve(c, file)?),
        Command::Augment(c) => commands::augment(&resolve(c, file)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DEMOGEN_LOG", "warn")).init();
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(report)) => {
            if cli.json {
                println!("{}", report.summary);
            } else {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report.summary).unwrap_or_default()
                );
            }
            if report.complete {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(_) => ExitCode::from(2),
    }
}

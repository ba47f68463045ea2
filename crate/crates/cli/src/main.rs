//! `flamesense`: estimate the excess air coefficient of a flame from camera frames.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flamesense_core::{Error, ErrorClass};

#[derive(Debug, Parser)]
#[command(name = "flamesense", version, about)]
struct Cli {
    /// TOML run configuration; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Feature method: sumsim, naivebayes, mvn, gmm or a baseline name.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Channel set such as R-G-B.
    #[arg(long, global = true)]
    channels: Option<String>,
    /// Training algorithm: scg or lm.
    #[arg(long, global = true)]
    trainer: Option<String>,
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Output file or directory of the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Any configuration key, e.g. `--set synth.image_size=64`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic flame session.
    Synth,
    /// Align frames with the analyzer log into a manifest.
    Sync,
    /// Fit the ideal flame model from reference frames.
    FitModel,
    /// Extract a feature table for every manifest frame.
    Extract,
    /// Train one network and save the predictor.
    Train,
    /// Estimate lambda for frames with a saved predictor.
    Predict {
        images: Vec<PathBuf>,
        /// Frame index CSV (timestamp_s, relative_image_path).
        #[arg(long)]
        frames: Option<PathBuf>,
    },
    /// Repeated runs per method and trainer with summary tables.
    Evaluate,
    /// Print the summary table of a finished evaluation.
    Report,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn run(cli: &Cli) -> flamesense_core::Result<()> {
    let overrides = config::Overrides {
        seed: cli.seed,
        method: cli.method.clone(),
        channels: cli.channels.clone(),
        trainer: cli.trainer.clone(),
        runs: cli.runs,
        set: cli.set.clone(),
    };
    let l = config::load(cli.config.as_deref(), &overrides)?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Synth => commands::synth(&l, out),
        Command::Sync => commands::sync_cmd(&l, out),
        Command::FitModel => commands::fit_model(&l, out),
        Command::Extract => commands::extract(&l, out),
        Command::Train => commands::train(&l, out),
        Command::Predict { images, frames } => commands::predict(&l, out, images, frames.as_deref()),
        Command::Evaluate => commands::evaluate(&l, out),
        Command::Report => commands::report(&l, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

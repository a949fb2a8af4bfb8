//! `reactionmamba` command-line pipeline: every subcommand reads its inputs,
//! validates them, and only then writes under `--out`.

pub mod commands;
pub mod config;
pub mod plot;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use reactionmamba_core::Result;

pub use commands::{
    ablate::AblateArgs, bench::BenchArgs, evaluate::EvaluateArgs, generate::GenerateArgs, plot::PlotArgs,
    synth::SynthArgs, train::TrainArgs,
};

#[derive(Parser, Debug)]
#[command(name = "reactionmamba", version, about = "Reaction motion generation with a state-space conditional VAE")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic interaction dataset with a manifest.
    SynthData(SynthArgs),
    /// Train one model variant and write checkpoints plus a JSON-lines log.
    Train(TrainArgs),
    /// Generate a reaction for an actor motion file.
    Generate(GenerateArgs),
    /// Score a checkpoint on a dataset split against the copy-actor baseline.
    Evaluate(EvaluateArgs),
    /// Time inference over sequence lengths.
    Bench(BenchArgs),
    /// Train and evaluate several variants on shared data and seed.
    Ablate(AblateArgs),
    /// Render motion files to SVG.
    Plot(PlotArgs),
}

/// Settings file accepted by every subcommand.
#[derive(clap::Args, Debug, Clone, Default)]
pub struct ConfigFlag {
    /// JSON file of settings; flags given on the command line take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = config::thread_cap()? {
        log::debug!("thread cap {n}");
    }
    match cli.command {
        Command::SynthData(a) => commands::synth::run(&a),
        Command::Train(a) => commands::train::run(&a),
        Command::Generate(a) => commands::generate::run(&a),
        Command::Evaluate(a) => commands::evaluate::run(&a),
        Command::Bench(a) => commands::bench::run(&a),
        Command::Ablate(a) => commands::ablate::run(&a),
        Command::Plot(a) => commands::plot::run(&a),
    }
}

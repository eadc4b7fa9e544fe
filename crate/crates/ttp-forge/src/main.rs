use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ttp_forge::{compare, evaluate, generate, pipeline};

#[derive(Parser, Debug)]
#[command(name = "ttp-forge", version, about = "Traveling thief benchmark and heuristic toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a factorial suite of .ttp instances
    Generate(generate::GenerateArgs),
    /// Data and model-building stages, from EA dumps to fitted curves
    #[command(subcommand)]
    Pipeline(pipeline::PipelineCmd),
    /// Run heuristics over an instance directory and rank them
    Compare(compare::CompareArgs),
    /// Score one instance under a given tour and packing
    Evaluate(evaluate::EvaluateArgs),
}

fn main() -> Result<()> {
    if let Ok(threads) = std::env::var("TTP_FORGE_THREADS") {
        let threads: usize = threads
            .parse()
            .with_context(|| format!("TTP_FORGE_THREADS must be a number, got {threads:?}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("rayon pool already initialized")?;
    }

    let cli = Cli::parse();
    match cli.command {
        Command::Generate(args) => generate::run(&args),
        Command::Pipeline(cmd) => pipeline::run(&cmd),
        Command::Compare(args) => compare::run(&args),
        Command::Evaluate(args) => evaluate::run(&args),
    }
}

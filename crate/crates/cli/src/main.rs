use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trafficgrade_cli::{CliError, Outcome, Pipeline, RunConfig};

/// Citywide traffic-grade prediction from multi-resolution traffic history.
#[derive(Debug, Parser)]
#[command(name = "trafficgrade", version)]
struct Cli {
    /// TOML run configuration; defaults apply to every missing field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run a single prediction horizon (hours) instead of the configured list.
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Attention heads; must divide the road count.
    #[arg(long, global = true)]
    heads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the four road graphs and the Moran's I report.
    Graphs,
    /// Label every road and hour with a congestion grade.
    Label,
    /// Train one model per horizon.
    Train,
    /// Predict test-set grades and export the fusion attention.
    Predict,
    /// Score test-set predictions.
    Evaluate,
    /// Report combination, resolution and graph importance.
    Explain,
    /// Generate a synthetic network and measurements.
    Synth,
    /// Compare the full model with single-resolution variants.
    Ablate,
}

fn config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(h) = cli.horizon {
        cfg.horizons = vec![h];
    }
    if let Some(out) = &cli.out {
        cfg.paths.out_dir = out.clone();
    }
    if let Some(heads) = cli.heads {
        cfg.heads = heads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let pipeline = Pipeline::new(config(cli)?)?;
    match cli.command {
        Command::Graphs => pipeline.graphs(),
        Command::Label => pipeline.label(),
        Command::Train => pipeline.train(),
        Command::Predict => pipeline.predict(),
        Command::Evaluate => pipeline.evaluate(),
        Command::Explain => pipeline.explain(),
        Command::Synth => pipeline.synth(),
        Command::Ablate => pipeline.ablate(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for path in &outcome.artifacts {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use motorkpi_cli::*;

#[derive(Parser)]
#[command(name = "motorkpi", version, about = "Surrogate models for electric-machine KPIs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset with the field oracle.
    GenData,
    /// Train the configured model on the dataset.
    Train,
    /// Evaluate a trained model on the test split.
    Eval,
    /// Train image models at every configured resolution and seed.
    ResolutionStudy,
    /// Compare trained DNN and GPR models per KPI.
    Compare,
    /// Run the multi-objective optimizer.
    Optimize,
}

fn run(cli: Cli) -> anyhow::Result<Produced> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if let Some(j) = cli.jobs {
        anyhow::ensure!(j > 0, "--jobs must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    std::fs::create_dir_all(&cfg.out)?;
    match cli.command {
        Command::GenData => cmd_gen_data(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Eval => cmd_eval(&cfg),
        Command::ResolutionStudy => cmd_resolution_study(&cfg),
        Command::Compare => cmd_compare(&cfg),
        Command::Optimize => cmd_optimize(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(p) => {
            println!("wrote {} files", p.files.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

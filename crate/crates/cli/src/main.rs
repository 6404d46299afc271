use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use residence_lab::config::{ExperimentConfig, Task};
use residence_lab::{run, CliError, RunOptions, THREADS_ENV};

#[derive(Debug, Parser)]
#[command(name = "residence-lab", version, about = "Residence-time experiments for Itô systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for path simulation.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate paths and write them with their outcomes.
    Simulate,
    /// Residence-time statistics and bound comparisons.
    HitStats,
    /// Check a Lyapunov certificate on a grid.
    Certify,
    /// Solve the 1D mean residence time problem.
    Dirichlet,
    /// Synthesize an aiming feedback.
    Synthesize,
    /// Reference experiments.
    Bench {
        #[command(subcommand)]
        which: BenchCommand,
    },
}

#[derive(Debug, Subcommand)]
enum BenchCommand {
    /// Mean residence times for polynomial drifts.
    Table1,
    /// Catalog examples against their bounds.
    Examples,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let task = match cli.command {
        Command::Simulate => Task::Simulate,
        Command::HitStats => Task::HitStats,
        Command::Certify => Task::Certify,
        Command::Dirichlet => Task::Dirichlet,
        Command::Synthesize => Task::Synthesize,
        Command::Bench { which: BenchCommand::Table1 } => Task::BenchmarkTable1,
        Command::Bench { which: BenchCommand::Examples } => Task::BenchmarkExamples,
    };
    let opts = RunOptions {
        seed: cli.common.seed,
        threads: cli.common.threads,
        out: cli.common.out,
    };
    let result = cli
        .common
        .config
        .as_deref()
        .map(ExperimentConfig::load)
        .unwrap_or_else(|| Ok(ExperimentConfig::default()))
        .and_then(|config| run(config, task, &opts));
    match result {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{line}");
            }
            for f in &summary.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn report(e: &CliError) {
    eprintln!("residence-lab: {e}");
}

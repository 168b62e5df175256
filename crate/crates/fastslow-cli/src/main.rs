//! `fastslow <command> --config <file> [--out <dir>] [--seed <u64>]
//! [--threads <n>]` — configuration-driven front end over the toolkit.

use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use fastslow_cli::commands::{self, CommandKind};
use fastslow_cli::scenario;

#[derive(Parser)]
#[command(name = "fastslow", version, about = "Switching-diffusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: scenario `out_dir`, then $FASTSLOW_OUT,
    /// then the working directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// One hybrid trajectory at the first schedule row.
    Simulate,
    /// Averaged field on the grid and its trajectory from x0.
    Average,
    /// Limit cycle of the averaged field and its period.
    Cycle,
    /// Empirical occupation measure and the cycle's occupation measure.
    Invariant,
    /// Exit times from a ball around the most unstable critical point.
    ExitTime,
    /// Convergence sweep along the scale schedule.
    Converge,
    /// The full benchmark pipeline (seven files).
    ReproduceExample,
}

impl From<&Command> for CommandKind {
    fn from(c: &Command) -> Self {
        match c {
            Command::Simulate => Self::Simulate,
            Command::Average => Self::Average,
            Command::Cycle => Self::Cycle,
            Command::Invariant => Self::Invariant,
            Command::ExitTime => Self::ExitTime,
            Command::Converge => Self::Converge,
            Command::ReproduceExample => Self::ReproduceExample,
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<Vec<PathBuf>> {
    let config = cli.config.as_ref().ok_or_else(|| anyhow!("--config <file> is required"))?;
    let mut scenario = scenario::parse_config(config)
        .with_context(|| format!("loading {}", config.display()))?;
    if let Some(seed) = cli.seed {
        scenario.sim.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| scenario.out_dir.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os("FASTSLOW_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let kind = CommandKind::from(&cli.command);
    let work = || commands::execute(&scenario, kind, &out);
    let written = match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building thread pool")?
            .install(work),
        None => work(),
    }?;
    Ok(written)
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(written) => {
            for path in written {
                println!("{}", path.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

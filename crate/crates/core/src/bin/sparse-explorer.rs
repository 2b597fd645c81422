use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sparse_explorer::config::{ExperimentConfig, ExperimentKind};
use sparse_explorer::harness::{run_experiment, running_average};
use sparse_explorer::Error;

#[derive(Parser)]
#[command(name = "sparse-explorer", version, about = "DQN with model-based exploration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exploration-only runs: every action comes from the exploration strategy.
    Explore(RunArgs),
    /// Full training runs (DQN or REINFORCE).
    Train(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeat for several seeds; replaces the config's seed list.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// random | kernel | model-based
    #[arg(long)]
    strategy: Option<String>,
    /// mountain-car | sparse-corridor:<n>
    #[arg(long)]
    env: Option<String>,
    /// dqn | reinforce
    #[arg(long)]
    agent: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
}

fn build_config(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
            ExperimentConfig::parse_str(&text)?
        }
        None => ExperimentConfig::default(),
    };
    config.kind = kind;
    if !args.seeds.is_empty() {
        config.seeds = args.seeds.clone();
    }
    if let Some(out) = &args.out {
        config.out = out.clone();
    }
    if let Some(v) = &args.strategy {
        config.set("strategy", v)?;
    }
    if let Some(v) = &args.env {
        config.set("env", v)?;
    }
    if let Some(v) = &args.agent {
        config.set("agent", v)?;
    }
    if let Some(n) = args.episodes {
        config.episodes = n;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Explore(a) => (ExperimentKind::ExplorationOnly, a),
        Command::Train(a) => (ExperimentKind::Training, a),
    };
    let config = match build_config(kind, args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let report = match run_experiment(&config) {
        Ok(r) => r,
        Err(Error::Config(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    for (seed, result) in &report.runs {
        match result {
            Ok(run) => {
                let rewards = run.rewards();
                let last = running_average(&rewards, config.running_avg_window)
                    .last()
                    .copied()
                    .unwrap_or(f64::NAN);
                let goals = run.episodes.iter().filter(|e| e.reached_goal).count();
                println!(
                    "seed {seed}: {} episodes, {goals} reached goal, final running avg {last:.3}, coverage {:.4}",
                    run.episodes.len(),
                    run.coverage
                );
            }
            Err(e) => eprintln!("seed {seed}: failed: {e}"),
        }
    }
    println!("artifacts written to {}", config.out.display());
    if report.all_failed() {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    }
}

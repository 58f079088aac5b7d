use std::path::PathBuf;

use clap::{Parser, Subcommand};
use pilqr_cli::{bench, solve, validate};

#[derive(Parser)]
#[command(name = "pilqr", version, about = "Equality-constrained iterative LQR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the problem described by a TOML config and write CSV results.
    Solve { config: PathBuf },
    /// Time repeated solves over the configured list of sampling times.
    Bench {
        config: PathBuf,
        /// Overrides `bench.repetitions`.
        #[arg(long)]
        repetitions: Option<usize>,
        /// Run repetitions concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Run the oracle and invariant checks on one catalog problem.
    Validate {
        problem: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Solve { config } => solve::cmd_solve(&config),
        Command::Bench {
            config,
            repetitions,
            parallel,
        } => bench::cmd_bench(&config, repetitions, parallel),
        Command::Validate { problem, seed } => validate::cmd_validate(&problem, seed),
    };
    std::process::exit(code);
}

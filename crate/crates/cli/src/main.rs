//! `equipomdp`: train, evaluate and verify symmetric recurrent agents on the
//! CarFlag domains, solve small instances exactly, and aggregate curves.

mod config;
mod eval;
mod oracle;
mod plotdata;
mod train;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::Overrides;

/// Exit code 2 is reserved for usage and configuration errors; everything
/// that goes wrong after a valid configuration was built (including a
/// failed verification) exits with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "equipomdp", version, about = "Symmetric recurrent actor-critic agents and exact oracles for CarFlag POMDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent; writes manifest.toml, curve.csv and checkpoints to the run directory
    Train(#[command(flatten)] Overrides),
    /// Evaluate a checkpoint from a training run
    Eval(eval::EvalArgs),
    /// Run one verification suite; exits 0 iff every tolerance is met
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        #[command(flatten)]
        flags: Overrides,
    },
    /// Solve the exported POMDP exactly and score the greedy policy in the simulator
    Oracle(#[command(flatten)] Overrides),
    /// Aggregate curves across seeds: mean and population std per eval step
    Plotdata {
        /// Run directories or curve CSV files
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output CSV (stdout if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// Random networks and histories: actor logits permute, critic values stay put
    Equivariance,
    /// The exported tables are unchanged by the group action
    Invariance,
    /// Beliefs of transformed histories are transformed beliefs
    Lemma1,
    /// The exact Q-function is invariant and its argmax sets correspond
    Theorem1,
    /// Autodiff primitives and the recurrent A2C loss against finite differences
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(flags) => train::run(&flags),
        Command::Eval(args) => eval::run(&args),
        Command::Verify { suite, flags } => verify::run(suite, &flags),
        Command::Oracle(flags) => oracle::run(&flags),
        Command::Plotdata { inputs, out } => plotdata::run(&inputs, out.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

//! `flexgrid` command-line front end.
//!
//! Each subcommand loads its inputs, runs one stage of the corrective
//! workflow and writes plot-ready CSV plus JSON reports into `--out`.
//! Nothing is written anywhere else.

pub mod artifacts;
pub mod commands;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use flexgrid::opman::Method;

pub use commands::{cmd_powerflow, cmd_solve, cmd_sweep, cmd_synth, cmd_validate, Outcome};
pub use manifest::RunManifest;

/// Process exit codes. These are a stable contract.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INPUT: i32 = 2;
    pub const POWER_FLOW: i32 = 3;
    pub const VIOLATIONS: i32 = 4;
    pub const INFEASIBLE: i32 = 5;
}

/// Maps a library error to the exit code of its class.
pub fn exit_code(e: &flexgrid::Error) -> i32 {
    use flexgrid::Error as E;
    match e {
        E::NonConvergence { .. } | E::SingularJacobian => exit::POWER_FLOW,
        E::Infeasible { .. } | E::NoIncumbent { .. } | E::Numerical(_) => exit::INFEASIBLE,
        _ => exit::INPUT,
    }
}

#[derive(Debug, Parser)]
#[command(name = "flexgrid", version, about = "Corrective HV grid operation with aggregated PQ(V) flexibility regions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and check a grid, a FOR directory or a scenario.
    Validate {
        #[command(flatten)]
        input: InputArgs,
        /// Also write a manifest here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the AC power flow and report voltages and branch loadings.
    Powerflow {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect violations and correct them with FOR flexibility.
    Solve {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat the correction under extra reactive injections at one bus.
    Sweep {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic reference scenario.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        buses: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct InputArgs {
    /// Grid JSON file.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Directory of FOR JSON files, one per flexible bus.
    #[arg(long)]
    pub fors: Option<PathBuf>,
    /// Scenario file naming the grid, FORs, limits and solver settings.
    #[arg(long, conflicts_with_all = ["grid", "fors"])]
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SolverArgs {
    /// Overrides the scenario's method (convex when neither is set).
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

/// Runs a parsed command line and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Validate { input, out } => cmd_validate(&input, out.as_deref()),
        Command::Powerflow { input, out } => cmd_powerflow(&input, &out),
        Command::Solve { input, solver, out } => cmd_solve(&input, &solver, &out),
        Command::Sweep { input, solver, out } => cmd_sweep(&input, &solver, &out),
        Command::Synth { seed, buses, out } => cmd_synth(seed, buses, &out),
    };
    for line in &outcome.stdout {
        println!("{line}");
    }
    for line in &outcome.diagnostics {
        eprintln!("{line}");
    }
    outcome.code
}

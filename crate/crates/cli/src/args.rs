use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Finite element simulation of haptotactic cancer invasion.
#[derive(Debug, Parser)]
#[command(name = "haptosim", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration, writing VTK snapshots and a diagnostics CSV.
    Run(RunArgs),
    /// Run the Cartesian product of parameter axes.
    Sweep(SweepArgs),
    /// Run verification studies against independent oracles.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Configuration file (`key = value` lines); defaults apply without one.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set chi=0.75`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Suppress per-step progress on stderr.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sweep axis `key=v1,v2,...`; repeat for a Cartesian product.
    #[arg(long = "axis", value_name = "KEY=V1,V2,...", required = true)]
    pub axes: Vec<String>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output root; each combination gets its own subdirectory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Concurrent runs (default: available cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Element,
    Ode,
    Order,
    Scaling,
    All,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub suite: Suite,
    /// Directory for CSV study reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

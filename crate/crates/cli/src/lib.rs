//! Command-line front end: argument definitions, command implementations
//! and the mapping from errors to exit codes.

pub mod commands;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mixkin_core::Error;

#[derive(Debug, Parser)]
#[command(name = "mixkin", version, about = "DNA mixture fitting, deconvolution and kinship likelihood ratios")]
pub struct Cli {
    /// Worker threads for marker-level parallelism (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the mixture model and write parameter estimates.
    Fit(FitArgs),
    /// Rank contributor genotypes per marker.
    Deconvolve(DeconvolveArgs),
    /// Likelihood ratio for a relationship with typed relatives.
    Lr(LrArgs),
    /// Simulate peak tables from a scenario file.
    Simulate(SimulateArgs),
    /// Fit, deconvolution and likelihood ratios in one text report.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FitOverrides {
    /// Jittered restarts besides the default start.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Seed for the restart jitter.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Objective evaluations allowed per start in the simplex search.
    #[arg(long)]
    pub max_evaluations: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ParamSource {
    /// Parameter CSV from `fit`; skips fitting.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[command(flatten)]
    pub fit: FitOverrides,
}

#[derive(Debug, Clone, Args)]
pub struct HypothesisArgs {
    /// Contributor id of the tested person.
    #[arg(long)]
    pub target: Option<String>,
    /// parent-of-child, parent-of-child-with-mother or child-of-parent.
    #[arg(long)]
    pub relationship: Option<String>,
    /// Profile id of the typed child.
    #[arg(long)]
    pub child: Option<String>,
    /// Profile id of the typed mother.
    #[arg(long)]
    pub mother: Option<String>,
    /// Profile id of the typed parent (child-of-parent).
    #[arg(long)]
    pub parent: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub config: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[command(flatten)]
    pub fit: FitOverrides,
}

#[derive(Debug, Args)]
pub struct DeconvolveArgs {
    pub config: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Genotypes listed per marker and contributor: a count or `all`.
    #[arg(long, default_value = "all")]
    pub top: String,
    /// Restrict to these contributor ids.
    #[arg(long, value_delimiter = ',')]
    pub contributor: Vec<String>,
    #[command(flatten)]
    pub source: ParamSource,
    #[command(flatten)]
    pub hypothesis: HypothesisArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Wlr,
    Aln,
    Mbn,
    Rpt,
    All,
}

#[derive(Debug, Args)]
pub struct LrArgs {
    /// Case file; not needed with --union-lrs.
    pub config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub method: MethodArg,
    /// Prior probability of the relationship.
    #[arg(long)]
    pub prior: Option<f64>,
    #[command(flatten)]
    pub hypothesis: HypothesisArgs,
    #[command(flatten)]
    pub source: ParamSource,
    /// Targets forming a union of hypotheses.
    #[arg(long, value_delimiter = ',')]
    pub union_targets: Vec<String>,
    /// Precomputed ratios of the sub-hypotheses.
    #[arg(long, value_delimiter = ',')]
    pub union_lrs: Vec<f64>,
    /// Relative priors of the sub-hypotheses (default: equal).
    #[arg(long, value_delimiter = ',')]
    pub union_priors: Vec<f64>,
    /// Also tabulate the union ratio over this many prior steps (two
    /// hypotheses only).
    #[arg(long)]
    pub union_range: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub scenario: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub replicates: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub config: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Genotypes listed per marker and contributor.
    #[arg(long, default_value = "3")]
    pub top: String,
    #[arg(long)]
    pub prior: Option<f64>,
    #[command(flatten)]
    pub hypothesis: HypothesisArgs,
    #[command(flatten)]
    pub source: ParamSource,
}

/// 2 for invalid input, 3 for a failed fit, 4 for a violated internal
/// invariant.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Convergence(_)) => 3,
        Some(Error::Invariant(_)) => 4,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Deconvolve(a) => commands::deconvolve(&a),
        Command::Lr(a) => commands::lr(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Report(a) => commands::report(&a),
    }
}

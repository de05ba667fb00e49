mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "qote", version, about = "Bounds on quantiles of treatment effects and minimax-regret policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-cell effect-quantile bounds from data or a simulation design.
    Bounds(BoundsArgs),
    /// Minimax-regret, maximin and regret reports from bounds.
    Policy(PolicyArgs),
    /// Classification-rate and regret tables for one design.
    Simulate(SimulateArgs),
    /// Outcome-weighted hinge-loss learner on bounds.
    Owl(OwlArgs),
    /// Full replication preset: rate tables and interval figure data.
    Tables(TablesArgs),
}

#[derive(Args, Clone)]
struct Source {
    /// CSV with header `y,d,x1,...,xp`.
    #[arg(long, conflicts_with = "dgp")]
    input: Option<PathBuf>,
    /// Design JSON file or preset name `subgroup1` to `subgroup8`.
    #[arg(long)]
    dgp: Option<String>,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    source: Source,
    /// One or more quantile levels, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.25")]
    tau: Vec<f64>,
    #[arg(long, default_value = "none")]
    assumption: String,
    /// Grid size; defaults to 50, or 24 under si.
    #[arg(long)]
    k: Option<usize>,
    /// Also write effect-CDF envelopes on this many t points.
    #[arg(long)]
    tgrid: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PolicyArgs {
    /// Bounds JSON written by `bounds`, or a list of `{x, lower, upper}` records.
    #[arg(long, conflicts_with = "dgp")]
    input: Option<PathBuf>,
    /// Compute population bounds inline for this design.
    #[arg(long)]
    dgp: Option<String>,
    /// JSON list of `{x, weight}` cell masses; defaults to the bounds file.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Select rows of a multi-tau bounds file, or the level for `--dgp`.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value = "none")]
    assumption: String,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "subgroup1")]
    dgp: String,
    #[arg(long, default_value_t = 0.25)]
    tau: f64,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Grid size for no-assumption bounds.
    #[arg(long, default_value_t = 50)]
    k: usize,
    /// Grid size for SI bounds.
    #[arg(long, default_value_t = 16)]
    k_si: usize,
    /// Comma separated subset of the six estimator tags.
    #[arg(long, value_delimiter = ',')]
    estimators: Vec<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct OwlArgs {
    /// Bounds JSON as accepted by `policy`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct TablesArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    k: usize,
    /// SI grid for the replications.
    #[arg(long, default_value_t = 16)]
    k_si: usize,
    /// SI grid for the population intervals.
    #[arg(long, default_value_t = 24)]
    k_interval: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bounds(a) => commands::bounds(a),
        Command::Policy(a) => commands::policy(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Owl(a) => commands::owl(a),
        Command::Tables(a) => commands::tables(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(io::exit_code(&e))
        }
    }
}

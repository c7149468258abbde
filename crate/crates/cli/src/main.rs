//! `obsvkit`: runs observability and invariance batteries over seeded
//! scenarios and writes a JSON report.
//!
//! Exit status: 0 when every check passes (or the run is degenerate and
//! therefore informational), 1 when a check fails, 2 on invalid
//! configuration.

mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use obsvkit::dynamics::Sensor;
use obsvkit::scenario::Degeneracy;

use crate::run::CliError;

#[derive(Parser, Debug)]
#[command(name = "obsvkit", version, about = "Observability verification for inertial navigation models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the observability matrix per trial and check its nullspace.
    Analyze(AnalyzeArgs),
    /// Run one of the identity batteries.
    Verify {
        #[command(subcommand)]
        battery: Battery,
    },
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Number of seeded trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Base seed; trial i uses seed + i.
    #[arg(long, env = "OBSVKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct AnalyzeArgs {
    #[arg(long, value_parser = parse_sensor)]
    pub system: Sensor,
    /// Features per scenario; defaults to 2 for vins and 1 for lins.
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long, default_value = "none", value_parser = parse_degeneracy)]
    pub degeneracy: Degeneracy,
    /// Comma-separated `name=value` pairs: check_tol, gap_tol, rank_tol.
    #[arg(long)]
    pub tol_overrides: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Battery {
    /// Closed-form gradient rows against numeric gradients.
    Gradients(CommonArgs),
    /// Projection-derivative, triple-cross and coordinate-transfer identities.
    Identities(CommonArgs),
    /// Lie brackets of n4 with every system field, plus a mutation control.
    Brackets(CommonArgs),
    /// Invariance of n4 under the flow.
    Flow(FlowArgs),
}

#[derive(Args, Debug, Clone)]
pub struct FlowArgs {
    /// Flow length in seconds; schedules are rescaled to it.
    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,
    /// RK4 step in seconds.
    #[arg(long, default_value_t = obsvkit::lie::DEFAULT_DT)]
    pub dt: f64,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn parse_sensor(s: &str) -> Result<Sensor, String> {
    s.parse().map_err(|e: obsvkit::Error| e.to_string())
}

fn parse_degeneracy(s: &str) -> Result<Degeneracy, String> {
    s.parse().map_err(|e: obsvkit::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => run::analyze(&a),
        Command::Verify { battery } => run::verify(&battery),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qpv_core::protocol::Mode;
use qpv_core::QpvError;

mod commands;
mod config;

#[derive(Parser, Debug)]
#[command(
    name = "qpv",
    version,
    about = "Device-independent quantum position verification toolkit"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct Common {
    /// Protocol variant.
    #[arg(long, global = true, value_enum, default_value_t = ModeArg::Basic)]
    pub mode: ModeArg,
    /// Soundness error as log2(1/δ).
    #[arg(long, global = true, default_value_t = 64.0)]
    pub delta_log2: f64,
    /// Target completeness (pass probability of the honest prover).
    #[arg(long, global = true, default_value_t = 0.97725)]
    pub epsilon: f64,
    /// Entanglement-robustness threshold per trial.
    #[arg(long, global = true, default_value_t = 8e-6)]
    pub rth: f64,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// JSON configuration file for the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker cap. All work is deterministic and currently runs on one thread.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Basic,
    Entanglement,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Basic => Mode::Basic,
            ModeArg::Entanglement => Mode::Entanglement,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write simulated one-minute trial files.
    Simulate(commands::SimulateArgs),
    /// Fit the quantum-achievable distribution to calibration trials.
    Fit(commands::FitArgs),
    /// Build and certify a test factor from a fitted distribution.
    BuildTf(commands::BuildTfArgs),
    /// Segment trial files into instances and run the protocol.
    Analyze(commands::AnalyzeArgs),
    /// Required trials and runtime trade-off curves.
    Plan(commands::PlanArgs),
    /// Target regions and quantum-advantage ratios.
    Geometry(commands::GeometryArgs),
}

/// Outcome of a subcommand that completed without crashing.
pub enum Status {
    Completed,
    ProtocolFail,
}

const EXIT_PROTOCOL_FAIL: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> anyhow::Result<Status> {
        std::fs::create_dir_all(&cli.common.out)?;
        match &cli.command {
            Command::Simulate(a) => commands::simulate(&cli.common, a),
            Command::Fit(a) => commands::fit(&cli.common, a),
            Command::BuildTf(a) => commands::build_tf(&cli.common, a),
            Command::Analyze(a) => commands::analyze(&cli.common, a),
            Command::Plan(a) => commands::plan(&cli.common, a),
            Command::Geometry(a) => commands::geometry(&cli.common, a),
        }
    };
    match run() {
        Ok(Status::Completed) => ExitCode::SUCCESS,
        Ok(Status::ProtocolFail) => ExitCode::from(EXIT_PROTOCOL_FAIL),
        Err(e) => {
            eprintln!("error: {e:#}");
            let infeasible = matches!(
                e.downcast_ref::<QpvError>(),
                Some(QpvError::Infeasible(_) | QpvError::UselessFactor { .. })
            );
            ExitCode::from(if infeasible { EXIT_INFEASIBLE } else { 1 })
        }
    }
}

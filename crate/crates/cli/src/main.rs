use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use meanfield_core::experiment::ExperimentConfig;
use meanfield_core::Error;

mod commands;

/// Default output directory when neither `--out` nor `output.dir` is given.
pub const OUT_DIR_ENV: &str = "MEANFIELD_OUT_DIR";
const FALLBACK_OUT_DIR: &str = "meanfield-out";

#[derive(Parser)]
#[command(
    name = "meanfield",
    version,
    about = "Mean-field Langevin dynamics for two-layer networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every regularizer arm on teacher data and write trajectories, fits and bounds.
    Simulate(Common),
    /// Evaluate the log-Sobolev bounds (and optionally check the Lyapunov inequality).
    LsiBound(Common),
    /// Solve the 1-D Fokker–Planck equation on a grid: fixed point and transient.
    FpOracle(Common),
    /// Fit the exponential decay rate of a trajectory CSV.
    FitRate(Common),
    /// Compare analytic potential derivatives with finite differences.
    Gradcheck(Common),
    /// Sample-check the activation and regularizer certificates.
    ValidateSpecs(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config (`schema = 1`); the built-in two-neuron reference when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set sim.n=50` or `--set loss.kind=huber`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; overrides `output.dir` and $MEANFIELD_OUT_DIR.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> meanfield_core::Result<(ExperimentConfig, PathBuf)> {
        let cfg = match &self.config {
            Some(p) => ExperimentConfig::from_path(p, &self.set)?,
            None => {
                let text = ExperimentConfig::two_neuron_reference().to_toml_string()?;
                ExperimentConfig::from_toml_str(&text, &self.set)?
            }
        };
        let dir = self
            .out
            .clone()
            .or_else(|| cfg.output.dir.clone())
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR));
        Ok((cfg, dir))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::InvalidArgument(_) | Error::CertificateViolation(_) | Error::Infeasible(_) => 2,
        Error::NumericFault(_) | Error::ParticleFault { .. } => 3,
        Error::ConvergenceFailure { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, commands::Handler) = match &cli.command {
        Command::Simulate(c) => (c, commands::simulate),
        Command::LsiBound(c) => (c, commands::lsi_bound),
        Command::FpOracle(c) => (c, commands::fp_oracle),
        Command::FitRate(c) => (c, commands::fit_rate),
        Command::Gradcheck(c) => (c, commands::gradcheck),
        Command::ValidateSpecs(c) => (c, commands::validate_specs),
    };
    let result = common.load().and_then(|(cfg, dir)| {
        meanfield_core::experiment::ensure_writable(&dir)?;
        std::fs::write(dir.join("schema.md"), meanfield_core::experiment::schema_markdown())?;
        run(cfg, &dir)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

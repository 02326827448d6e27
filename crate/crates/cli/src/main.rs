//! `stmlmc`: uncertainty quantification for stochastic reaction-diffusion
//! equations with space-time finite elements and multilevel Monte Carlo.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver/run failure,
//! 4 verification-suite failure.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use stmlmc_cli::config::{ExperimentConfig, Overrides};
use stmlmc_cli::{runner, verify, CliError};

#[derive(Parser)]
#[command(
    name = "stmlmc",
    version,
    about = "Space-time multilevel Monte Carlo for stochastic reaction-diffusion equations"
)]
struct Cli {
    /// Experiment description (TOML); defaults reproduce the 1D cardiac
    /// test case when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override estimator.master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override geometry.levels (the finest hierarchy level L).
    #[arg(long, global = true)]
    levels: Option<usize>,

    /// Override estimator.samples (N for mc, N_coarse for mlmc).
    #[arg(long, global = true)]
    samples: Option<u64>,

    /// Per-level worker-pool sizes, e.g. "4,2,1,1".
    #[arg(long = "pool-spec", global = true)]
    pool_spec: Option<String>,

    /// Worker threads for sample execution.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory for CSV and VTK artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the eigenvalue table of the truncated field expansion.
    KlSpectrum,
    /// Run one deterministic (unperturbed) solve and dump the field.
    Solve,
    /// Monte Carlo estimate on a single level.
    Mc,
    /// Multilevel Monte Carlo estimate up to the target level.
    Mlmc,
    /// Controlled-convergence table for MC and MLMC over the levels.
    Convergence,
    /// Measured and model work comparison between MC and MLMC.
    Work,
    /// Run the built-in oracle suite (exit 4 on failure).
    Verify,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        levels: cli.levels,
        samples: cli.samples,
        pool_spec: cli.pool_spec.clone(),
        workers: cli.workers,
        out: cli.out.as_ref().map(|p| p.display().to_string()),
    })?;
    cfg.validate()?;
    match cli.command {
        Command::KlSpectrum => runner::run_kl_spectrum(&cfg).map(|_| ()),
        Command::Solve => runner::run_solve(&cfg).map(|_| ()),
        Command::Mc => runner::run_mc(&cfg).map(|_| ()),
        Command::Mlmc => runner::run_mlmc(&cfg).map(|_| ()),
        Command::Convergence => runner::run_convergence(&cfg).map(|_| ()),
        Command::Work => runner::run_work(&cfg).map(|_| ()),
        Command::Verify => unreachable!("verify dispatches before config"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if matches!(cli.command, Command::Verify) {
        let failures = verify::run_verify();
        return if failures == 0 {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(4)
        };
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

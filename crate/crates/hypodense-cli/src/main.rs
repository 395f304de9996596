use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use hypodense_cli::commands::dispatch;
use hypodense_cli::config::{Command, RunConfig};
use hypodense_cli::error::CliError;
use hypodense_cli::output::{finish, OutputDir};

#[derive(Parser)]
#[command(name = "hypodense", version, about = "Small-time density asymptotics for fBm-driven RDEs")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

/// Options shared by every subcommand. Any `key = value` config entry can also
/// be given as `--key value`.
#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    rest: Vec<String>,
}

#[derive(Subcommand)]
enum Sub {
    /// Sample fBm paths on the grid.
    SimulateFbm(Common),
    /// Lift one sample to a rough path and report its norms.
    Lift(Common),
    /// Solve the scaled, optionally shifted RDE for one sample.
    Solve(Common),
    /// Solve the skeleton ODE for a kernel direction or the minimiser.
    Skeleton(Common),
    /// Fractional Taylor expansion terms and remainder slopes.
    Expand(Common),
    /// Minimise the energy over the bridge constraint set.
    Minimize(Common),
    /// Malliavin covariance at the minimiser and its small-ε tail.
    Covariance(Common),
    /// Ranks of iterated Lie brackets at a point.
    Hormander(Common),
    /// Enumerate expansion exponents.
    Indices(Common),
    /// Estimate the density at one or more times.
    Density(Common),
    /// Fit the small-time expansion to a density curve.
    Asymptotics(Common),
    /// Run the acceptance suite.
    Verify(Common),
}

impl Sub {
    fn split(self) -> (Command, Common) {
        match self {
            Sub::SimulateFbm(c) => (Command::SimulateFbm, c),
            Sub::Lift(c) => (Command::Lift, c),
            Sub::Solve(c) => (Command::Solve, c),
            Sub::Skeleton(c) => (Command::Skeleton, c),
            Sub::Expand(c) => (Command::Expand, c),
            Sub::Minimize(c) => (Command::Minimize, c),
            Sub::Covariance(c) => (Command::Covariance, c),
            Sub::Hormander(c) => (Command::Hormander, c),
            Sub::Indices(c) => (Command::Indices, c),
            Sub::Density(c) => (Command::Density, c),
            Sub::Asymptotics(c) => (Command::Asymptotics, c),
            Sub::Verify(c) => (Command::Verify, c),
        }
    }
}

fn run(command: Command, common: Common) -> Result<String, CliError> {
    let started = Instant::now();
    let cfg = RunConfig::resolve(command, common.config.as_deref(), &common.rest)?;
    let workers = cfg.workers()?;
    let mut out = OutputDir::create(cfg.out_dir())?;
    // Verification manages its own pools.
    let result = if command == Command::Verify {
        dispatch(&cfg, &mut out)
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;
        pool.install(|| dispatch(&cfg, &mut out))
    };
    finish(&mut out, &cfg, workers, started.elapsed())?;
    result
}

fn main() -> ExitCode {
    let (command, common) = Cli::parse().command.split();
    match run(command, common) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("hypodense {command}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

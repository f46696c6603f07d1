//! `odp`: radial solutions, spectra, bifurcation certificates and branches of the
//! overdetermined problem on spherical caps.

mod commands;
mod config;
mod error;
mod output;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use config::RunConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "odp", version, about = "Bifurcation of overdetermined elliptic problems on spherical caps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Positive radial solution on the sphere; CSV r, u, du.
    Radial {
        #[command(flatten)]
        cfg: RunConfig,
    },
    /// Flat-limit profile at --lambda, or with --scan the limit lambda scan and window.
    Exterior {
        #[command(flatten)]
        cfg: RunConfig,
        #[arg(long)]
        scan: bool,
        /// Window summary as JSON (with --scan).
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Lowest two Dirichlet eigenvalues per degree; CSV l, mu, eig1, eig2.
    Spectrum {
        #[command(flatten)]
        cfg: RunConfig,
    },
    /// Dirichlet-to-Neumann table over the allowed degrees, as JSON.
    Dtn {
        #[command(flatten)]
        cfg: RunConfig,
        /// Also write the CSV h-table l, mu, mult, h.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Window, bifurcation value and parity certificate, as JSON.
    LambdaStar {
        #[command(flatten)]
        cfg: RunConfig,
    },
    /// Certificates along --k-list; CSV k, lambda_star, limit_lambda_star, parity, error.
    Sweep {
        #[command(flatten)]
        cfg: RunConfig,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Nonradial branch from lambda_*; CSV per amplitude.
    Branch {
        #[command(flatten)]
        cfg: RunConfig,
        /// Path prefix for `_outline.svg` and `_diagram.svg`.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Acceptance suite.
    Verify {
        #[arg(long, default_value = "reference")]
        preset: String,
        /// JSON report of every criterion.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unit-sphere form of a certificate, branch table or (--k, --lambda) pair.
    Rescale {
        #[command(flatten)]
        cfg: RunConfig,
        /// `lambda-star` JSON or `branch` CSV.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Re-solve the first branch point on the unit sphere.
        #[arg(long)]
        resolve: bool,
    },
}

/// Caps the global thread pool at `ODP_THREADS`.
fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("ODP_THREADS") else { return Ok(()) };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Config(format!("ODP_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Radial { cfg } => commands::radial(&cfg.resolve()?),
        Command::Exterior { cfg, scan, json } => commands::exterior(&cfg.resolve()?, scan, json.as_deref()),
        Command::Spectrum { cfg } => commands::spectrum(&cfg.resolve()?),
        Command::Dtn { cfg, csv } => commands::dtn(&cfg.resolve()?, csv.as_deref()),
        Command::LambdaStar { cfg } => commands::lambda_star(&cfg.resolve()?),
        Command::Sweep { cfg, json } => commands::sweep_k(&cfg.resolve()?, json.as_deref()),
        Command::Branch { cfg, svg } => commands::branch(&cfg.resolve()?, svg.as_deref()),
        Command::Verify { preset, out } => commands::verify(&preset, out.as_deref()),
        Command::Rescale { cfg, input, resolve } => commands::rescale(&cfg.resolve()?, input.as_deref(), resolve),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("odp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

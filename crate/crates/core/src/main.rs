use clap::{Parser, Subcommand};
use fclab::cli::{run, CliOptions, Command};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fclab",
    version,
    about = "Numerical laboratory for the shared limits of feedback communication, estimation, and control over Gaussian channels"
)]
struct Cli {
    /// Path to the JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config seed for anything that samples.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for emitted artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Emit log quantities in bits instead of nats.
    #[arg(long, global = true)]
    bits: bool,

    /// Uniform tolerance override for verification checks.
    #[arg(long, global = true)]
    tol: Option<f64>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the channel, and the encoder if present, for validity.
    Validate,
    /// Run one closed-loop transmission and write the transcript CSV.
    Simulate,
    /// Write the finite-horizon limits report and per-step convergence table.
    Limits,
    /// Write the steady-state limits report.
    Steady,
    /// Run the property suite; exits 2 when a check fails.
    Verify,
    /// Estimate block error rates by repeated transmission.
    Montecarlo,
    /// Search for the best source under a power budget or rate target.
    Search,
    /// Compare the classical recursive scalar scheme against the filter loop.
    SkCompare,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config) = cli.config else {
        eprintln!("error: a --config file is required");
        return ExitCode::from(1);
    };
    let opts = CliOptions {
        config,
        seed: cli.seed,
        out: cli.out,
        bits: cli.bits,
        tol: cli.tol,
    };
    let cmd = match cli.cmd {
        Cmd::Validate => Command::Validate,
        Cmd::Simulate => Command::Simulate,
        Cmd::Limits => Command::Limits,
        Cmd::Steady => Command::Steady,
        Cmd::Verify => Command::Verify,
        Cmd::Montecarlo => Command::MonteCarlo,
        Cmd::Search => Command::Search,
        Cmd::SkCompare => Command::SkCompare,
    };
    match run(cmd, &opts) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

//! Command-line front end for `skt-core`.
//!
//! ```text
//! skt --config run.cfg [--out DIR] [--lambda0-mode principal|first_positive] <command>
//!
//!   classify [--regime-report PATH]
//!   simulate
//!   blowup
//!   sweep --axis KEY --min A --max B --count N [--scale linear|log] [--simulate]
//! ```
//!
//! Exit codes: 0 success (whatever the verdict), 1 i/o failure, 2 invalid
//! configuration or arguments, 3 bracket construction failure, 4 solver failure.

pub mod commands;
pub mod config;
pub mod expr;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use skt_core::grid::EigenMode;

use commands::{cmd_blowup, cmd_classify, cmd_simulate, cmd_sweep, CliError, Context, Scale, SweepAxis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Principal,
    FirstPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScaleArg {
    Linear,
    Log,
}

#[derive(Debug, Parser)]
#[command(name = "skt", version, about = "Self-diffusion SKT system: regimes, simulation, blow-up")]
struct Cli {
    /// Run configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides [output] directory)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Accepted for interface stability; runs are deterministic
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Eigenpair used for λ0 and Φ0 (overrides [blowup] lambda0_mode)
    #[arg(long = "lambda0-mode", global = true, value_enum)]
    lambda0_mode: Option<ModeArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the global-existence and blow-up conditions
    Classify {
        #[arg(long = "regime-report")]
        regime_report: Option<PathBuf>,
    },
    /// Run the monotone-iteration solver
    Simulate,
    /// Simulate and compare with the Riccati bound
    Blowup,
    /// Classify (and optionally simulate) over a parameter range
    Sweep {
        #[arg(long)]
        axis: String,
        #[arg(long, allow_hyphen_values = true)]
        min: f64,
        #[arg(long, allow_hyphen_values = true)]
        max: f64,
        #[arg(long)]
        count: usize,
        #[arg(long, value_enum, default_value = "linear")]
        scale: ScaleArg,
        #[arg(long)]
        simulate: bool,
    },
}

fn execute(cli: Cli) -> Result<String, CliError> {
    let config = cli
        .config
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let mode = cli.lambda0_mode.map(|m| match m {
        ModeArg::Principal => EigenMode::Principal,
        ModeArg::FirstPositive => EigenMode::FirstPositive,
    });
    let ctx = Context::load(&config, cli.out.as_deref(), mode)?;
    match cli.command {
        Command::Classify { regime_report } => {
            let doc = cmd_classify(&ctx, regime_report.as_deref())?;
            let global = serde_json::to_value(doc.global.verdict).unwrap_or_default();
            let blowup = serde_json::to_value(doc.blowup.verdict).unwrap_or_default();
            Ok(format!("global: {global}, blowup: {blowup}"))
        }
        Command::Simulate => {
            let s = cmd_simulate(&ctx)?;
            Ok(format!("{} steps, termination {:?}", s.steps_taken, s.termination))
        }
        Command::Blowup => {
            let d = cmd_blowup(&ctx)?;
            Ok(format!(
                "T0 = {:?}, detected blow-up time = {:?}, bound violations = {}",
                d.report.t0, d.report.detected_blowup_time, d.report.bound_violations
            ))
        }
        Command::Sweep { axis, min, max, count, scale, simulate } => {
            let scale = match scale {
                ScaleArg::Linear => Scale::Linear,
                ScaleArg::Log => Scale::Log,
            };
            let rows = cmd_sweep(&ctx, &SweepAxis { key: axis, min, max, count, scale }, simulate)?;
            Ok(format!("{} rows", rows.len()))
        }
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

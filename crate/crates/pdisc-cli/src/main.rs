//! `pdisc`: instance generation, solving, analytic tables and sweeps.
//!
//! Exit codes: 0 success, 2 infeasible input or violated precondition,
//! 1 internal or I/O failure. Errors print one line prefixed `EPDISC:`.

mod commands;
mod config;
mod output;

use clap::{Parser, Subcommand};
use config::{Flags, RunConfig};
use std::fmt;
use std::path::Path;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pdisc", version, about = "LP plus edge-walk solver for the asymmetric binary perceptron")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a Gaussian instance to <out>/instance.pdisc.
    Gen(Flags),
    /// Run the full pipeline; CSV summary plus <out>/trace.json.
    Solve(Flags),
    /// Order parameters and the limiting margin law at (alpha, kappa).
    Analyze(Flags),
    /// Capacity bounds over a kappa grid.
    Capacity(Flags),
    /// Verify and emit a slack schedule.
    Schedule(Flags),
    /// OGP first-moment exponent grid.
    Ogp(Flags),
    /// Solve over seed and alpha grids and count successes.
    Sweep(Flags),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Internal(String),
    Pdisc(pdisc::Error),
}

impl CliError {
    pub fn usage(msg: String) -> Self {
        CliError::Usage(msg)
    }

    pub fn internal(msg: String) -> Self {
        CliError::Internal(msg)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Pdisc(e) if e.is_precondition() => 2,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Internal(_) => "internal",
            CliError::Pdisc(e) if e.is_precondition() => "precondition",
            CliError::Pdisc(_) => "solver",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Internal(m) => f.write_str(m),
            CliError::Pdisc(e) => write!(f, "{e}"),
        }
    }
}

impl From<pdisc::Error> for CliError {
    fn from(e: pdisc::Error) -> Self {
        CliError::Pdisc(e)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (flags, f): (&Flags, fn(&RunConfig) -> Result<(), CliError>) = match &cli.command {
        Command::Gen(x) => (x, commands::gen),
        Command::Solve(x) => (x, commands::solve),
        Command::Analyze(x) => (x, commands::analyze),
        Command::Capacity(x) => (x, commands::capacity),
        Command::Schedule(x) => (x, commands::schedule),
        Command::Ogp(x) => (x, commands::ogp),
        Command::Sweep(x) => (x, commands::sweep),
    };
    f(&RunConfig::resolve(flags)?)
}

fn fail(kind: &str, msg: &str, code: u8) -> ExitCode {
    eprintln!("EPDISC: {kind}: {}", msg.replace('\n', " "));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind::*;
            if matches!(e.kind(), DisplayHelp | DisplayVersion | DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            return fail("usage", line, 2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string(), e.exit_code()),
    }
}

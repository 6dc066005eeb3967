//! Command-line experiments: solve, evaluate, certify and sweep.

pub mod args;
pub mod commands;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use args::RandomSpec;

#[derive(Debug, Parser)]
#[command(name = "cdkf-sched", version, about = "Sensor rate scheduling for continuous-discrete Kalman filtering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a rate schedule on a surrogate objective.
    Solve(commands::solve::SolveArgs),
    /// Monte Carlo estimate of a schedule's expected cost.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Two-sided certification of a schedule, optionally over an SNR sweep.
    Bracket(commands::bracket::BracketArgs),
    /// Scalability and SNR experiments.
    Sweep(commands::sweep::SweepArgs),
    /// Compare the adjoint gradient with central differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
}

/// Failure classes mapped to exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    /// Bad flags or unreadable inputs: exit 2.
    #[error("{0}")]
    Usage(String),
    /// A requested check did not pass: exit 1.
    #[error("{0}")]
    Check(String),
}

pub const EXIT_CHECK: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Usage(_) => EXIT_USAGE,
                Failure::Check(_) => EXIT_CHECK,
            };
        }
        if let Some(cdkf_sched::Error::Json(_)) = cause.downcast_ref::<cdkf_sched::Error>() {
            return EXIT_USAGE;
        }
    }
    EXIT_CHECK
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Solve(a) => commands::solve::run(&a),
        Command::Evaluate(a) => commands::evaluate::run(&a),
        Command::Bracket(a) => commands::bracket::run(&a),
        Command::Sweep(a) => commands::sweep::run(&a),
        Command::Gradcheck(a) => commands::gradcheck::run(&a),
    }
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

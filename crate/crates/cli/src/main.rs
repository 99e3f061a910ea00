//! `metaprop`: pooled accuracy, heterogeneity and moderator selection for
//! trial-level proportions.

mod args;
mod commands;
mod manifest;

use std::panic;
use std::process::ExitCode;

use clap::Parser;

use args::Cli;

/// Exit status for input and validation failures.
pub const EXIT_INPUT: u8 = 2;
/// Exit status for numerical failures, including non-convergence.
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug)]
pub enum Failure {
    Input(String),
    Numerical(String),
}

impl From<metaprop::Error> for Failure {
    fn from(e: metaprop::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.verbose {
        "info"
    } else {
        "warn"
    }))
    .format_timestamp(None)
    .init();

    // Keep panics from reaching the shell as an abort with a backtrace.
    panic::set_hook(Box::new(|info| eprintln!("internal error: {info}")));
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match panic::catch_unwind(|| commands::run(&cli, &argv)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::Input(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
        Ok(Err(Failure::Numerical(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
        Err(_) => ExitCode::from(EXIT_NUMERICAL),
    }
}

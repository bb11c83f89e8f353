mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or inputs: exit 1.
    Usage(String),
    Lib(htype::Error),
    Io(std::io::Error),
    /// A check ran but did not pass: exit 2.
    SuiteFailed,
}

impl From<htype::Error> for CliError {
    fn from(e: htype::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use htype::Error as E;
        match self {
            CliError::SuiteFailed => 2,
            CliError::Lib(E::QuadratureFailure { .. } | E::NonTermination(_) | E::DegenerateDenominator(_)) => 2,
            _ => 1,
        }
    }
}

fn init_threads() {
    if let Some(n) = std::env::var("HTYPE_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    init_threads();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("error: {msg}"),
                CliError::Lib(err) => eprintln!("error: {err}"),
                CliError::Io(err) => eprintln!("error: {err}"),
                CliError::SuiteFailed => eprintln!("error: at least one check failed; see the report"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}

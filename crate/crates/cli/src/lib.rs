//! The `draft` command-line driver: one subcommand per experiment over a
//! shared run configuration, with a fixed on-disk layout that `reproduce`
//! can diff mechanically.

pub mod commands;
pub mod config;
pub mod layout;

use std::ffi::OsString;
use std::fmt;

use clap::Parser;

pub use commands::{Cli, Command};
pub use config::{load_config, parse_config, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<draft_core::Error> for CliError {
    fn from(e: draft_core::Error) -> Self {
        use draft_core::Error as E;
        match e {
            E::Config(_) => CliError::Config(e.to_string()),
            E::Usage(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<draft_theory::TheoryError> for CliError {
    fn from(e: draft_theory::TheoryError) -> Self {
        use draft_theory::TheoryError as E;
        match e {
            E::Config(_) => CliError::Config(e.to_string()),
            E::Usage(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code; failures print one line on stderr.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

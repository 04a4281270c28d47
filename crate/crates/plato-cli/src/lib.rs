//! The `plato` command line: synthetic data, KG pretraining, single
//! trainings, random searches and report tables.
//!
//! Every command writes `manifest.json` into its output directory. Exit
//! codes: 0 on success, 1 on runtime failure, 2 on usage or validation
//! errors.

pub mod cli;
mod commands;
pub mod manifest;

use std::process::ExitCode;

use clap::Parser;

pub use cli::Cli;
pub use commands::run;

/// Invalid flags or inputs; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub(crate) fn usage(message: impl std::fmt::Display) -> anyhow::Error {
    UsageError(message.to_string()).into()
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        2
    } else {
        1
    }
}

/// Parses `std::env::args`, runs the command and reports errors on stderr.
pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
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

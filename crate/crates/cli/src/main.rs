//! `pseudorbit` command-line driver.
//!
//! Exit codes: 0 when every verdict passes, 1 when a verification fails (or
//! a computation cannot complete), 2 for usage and configuration errors.

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;
use pseudorbit::Error;

use crate::args::Cli;
use crate::commands::{execute, Verdict};
use crate::output::OutDir;

/// Errors caused by the inputs rather than by the computation.
fn is_usage_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::InvalidArgument(_)
            | Error::InvalidMap(_)
            | Error::InvalidInterval { .. }
            | Error::InvalidKernel(_)
            | Error::MarginViolation(_)
            | Error::Boundary(_)
            | Error::EpsTooLarge { .. }
            | Error::PartitionMismatch(_)
    )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = OutDir::create(&cli.out_dir).and_then(|out| execute(&cli.command, &out));
    match result {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_usage_error(&e) { 2 } else { 1 })
        }
    }
}

//! Command-line pipeline: preprocess pilot data, train a generator and
//! write augmented replicates, score them against reference data, and fit
//! and invert learning curves.
//!
//! [`run`] is the whole program; `main` only forwards the arguments and the
//! exit code.

mod commands;
mod config;
mod manifest;
pub mod parse;

use std::ffi::OsString;

use clap::Parser;
use pilotgen::Error;

pub use commands::{augment, curve, evaluate, preprocess, project, Projection};
pub use config::{AugmentArgs, Cli, Command, CurveArgs, EvaluateArgs, PreprocessArgs, ProjectArgs};
pub use manifest::{sha256_file, Manifest};

/// Process exit status for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse { .. } | Error::Validation(_) | Error::State(_) => 2,
        Error::Infeasible(_) => 3,
        _ => 1,
    }
}

/// Parses `args`, runs the chosen command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .try_init();
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

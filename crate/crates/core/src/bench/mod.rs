//! The `tattn` command-line harness: `verify`, `gradcheck`, `sweep`, `predict`.
//!
//! Exit codes: 0 pass, 1 assertion failure, 2 usage error.

mod args;
mod commands;
mod record;
mod runner;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

pub use args::{Cli, Command, CommonArgs, Defaults, GradcheckArgs, Pattern, Settings};
pub use commands::{sweep_records, EXIT_FAIL, EXIT_PASS, EXIT_USAGE};
pub use record::{write_records, RunRecord, CSV_HEADER};
pub use runner::{masked_config, oracle, prediction, run_algo, Output, Problem, Run};

const GENERAL_DEFAULTS: Defaults = Defaults { n: 128, d: 16 };
const GRADCHECK_DEFAULTS: Defaults = Defaults { n: 16, d: 4 };

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return if code == 0 { EXIT_PASS } else { EXIT_USAGE };
        }
    };
    let outcome = match cli.command {
        Command::Verify(common) => Settings::resolve(common, GradcheckArgs::default(), GENERAL_DEFAULTS)
            .and_then(|s| commands::verify(&s, out)),
        Command::Gradcheck { common, extra } => {
            Settings::resolve(common, extra, GRADCHECK_DEFAULTS).and_then(|s| commands::gradcheck(&s, out))
        }
        Command::Sweep(common) => Settings::resolve(common, GradcheckArgs::default(), GENERAL_DEFAULTS)
            .and_then(|s| commands::sweep(&s, out)),
        Command::Predict(common) => Settings::resolve(common, GradcheckArgs::default(), GENERAL_DEFAULTS)
            .and_then(|s| commands::predict(&s, out)),
    };
    match outcome {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_FAIL,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
    }
}

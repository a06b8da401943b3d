//! Command-line front end: resolves a run configuration, executes one
//! subcommand and writes manifest-stamped CSV and JSON files.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use clap::Parser;
use config::{Cli, CommandKind};
pub use error::CliError;
use output::OutputDir;
use std::ffi::OsString;

/// Executes one invocation and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mdlab: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (kind, args) = cli.command.split();
    let (config, model) = config::resolve(args)?;
    let work = || {
        let mut out = OutputDir::create(&config.out)?;
        match kind {
            CommandKind::Coeffs => commands::cmd_coeffs(&config, &model, &mut out),
            CommandKind::Verify => commands::cmd_verify(&config, &model, &mut out),
            CommandKind::Coupling => commands::cmd_coupling(&config, &model, &mut out),
            CommandKind::Mdp => commands::cmd_mdp(&config, &model, &mut out),
            CommandKind::Report => commands::cmd_report(&config, &model, &mut out),
        }
    };
    match config.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?
            .install(work),
        None => work(),
    }
}

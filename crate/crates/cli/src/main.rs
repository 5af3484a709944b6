mod args;
mod bench;
mod commands;
mod error;
mod output;
mod scenario;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::{Cli, Command};
use crate::error::EXIT_INVALID;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors share the invalid-input status; 2 is reserved for non-convergence
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_INVALID),
            };
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::Cache(a) => commands::cache(a),
        Command::Bench(a) => bench::bench(a),
        Command::Generate(a) => commands::generate_scenario(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

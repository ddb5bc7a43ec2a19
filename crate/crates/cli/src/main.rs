use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use reviewad_cli::{error_json, render, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(v) => {
            // A closed stdout (e.g. piping into `head`) is not a failure of the command.
            let _ = writeln!(std::io::stdout().lock(), "{}", render(&v));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", render(&error_json(&e)));
            ExitCode::FAILURE
        }
    }
}

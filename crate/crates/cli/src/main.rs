use std::process::ExitCode;

use clap::Parser;
use volaug_cli::args::Cli;
use volaug_cli::commands::Outcome;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match volaug_cli::run(&cli, std::io::stdout().lock()) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = backtal::cli::Cli::parse();
    match backtal::cli::run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

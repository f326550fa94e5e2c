use std::process::ExitCode;

use clap::Parser;
use dphypo_core::cli::{self, Cli};

fn main() -> ExitCode {
    let parsed = Cli::parse();
    match cli::execute(parsed) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}

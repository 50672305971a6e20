use std::process::ExitCode;

use clap::Parser;
use hho_cli::{configure_threads, run, Args, RunConfig, RunError};

fn main() -> ExitCode {
    let args = Args::parse();
    let result = configure_threads().and_then(|_| RunConfig::from_args(&args)).and_then(|c| run(&c));
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                RunError::Config(_) | RunError::Mesh(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

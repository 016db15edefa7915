mod args;
mod commands;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

use args::Cli;

pub enum Failure {
    /// Bad flag combination; reported with usage text.
    Usage(String),
    Run(String),
}

impl From<rlda_core::Error> for Failure {
    fn from(e: rlda_core::Error) -> Self {
        Self::Run(e.to_string())
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("RLDA_THREADS") else { return Ok(()) };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Failure::Run(format!("RLDA_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Run(e.to_string()))
}

fn main() {
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|()| commands::run(cli));
    match outcome {
        Ok(()) => {}
        Err(Failure::Usage(msg)) => Cli::command().error(ErrorKind::ArgumentConflict, msg).exit(),
        Err(Failure::Run(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            std::process::exit(1);
        }
    }
}

use std::process::ExitCode;

use clap::Parser;
use loren_bench::config::{Cli, ExperimentConfig};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = ExperimentConfig::resolve(cli.kind, cli.options).and_then(|cfg| loren_bench::run_with_threads(&cfg));
    match result {
        Ok(outcome) => {
            for line in &outcome.summary {
                eprintln!("{line}");
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod report;

use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use commands::Failure;
use config::Cli;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let start = Instant::now();
    let mut report = match commands::run(&cli, argv) {
        Ok(r) => r,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    if !cli.deterministic {
        report.elapsed_seconds = Some(start.elapsed().as_secs_f64());
    }
    let text = match report::to_json(&report) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match &cli.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
        None => print!("{text}"),
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

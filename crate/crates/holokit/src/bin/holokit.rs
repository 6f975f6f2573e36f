use clap::Parser;
use holokit::cli::{emit, execute, load_config};
use std::path::PathBuf;
use std::process::ExitCode;

/// Run one holokit experiment described by a TOML config.
///
/// Exit status: 0 success, 2 schema or I/O error, 3 non-convergence,
/// 4 invariant violation, 5 precondition failure.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Experiment config (`[domain]`, `[map]`, `[run]`, `[tolerances]`).
    config: PathBuf,
    /// Overrides `run.output`.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut cfg = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("holokit: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if args.output.is_some() {
        cfg.run.output = args.output;
    }
    let report = execute(&cfg);
    if let Some(err) = &report.error {
        eprintln!("holokit: {}", err.message);
    }
    match emit(&report) {
        Ok(text) if report.config.run.output.is_none() => println!("{text}"),
        Ok(_) => {}
        Err(e) => {
            eprintln!("holokit: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    }
    ExitCode::from(report.exit_code() as u8)
}

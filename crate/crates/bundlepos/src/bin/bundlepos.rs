use std::path::PathBuf;
use std::process::ExitCode;

use bundlepos::cli::{self, RunOptions};
use clap::Parser;

/// Curvature positivity analyses and continuation runs on flat complex tori.
///
/// Exit codes: 0 success, 1 a checked invariant failed, 2 configuration
/// error, 3 numerical error. Set BUNDLEPOS_LOG (e.g. `info`) for progress
/// messages on stderr.
#[derive(Parser, Debug)]
#[command(name = "bundlepos", version)]
struct Args {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for report.json and data files.
    #[arg(long, default_value = "bundlepos-out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the task tolerance (bisection or Newton).
    #[arg(long)]
    tol: Option<f64>,
    /// Continues a continuation run from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BUNDLEPOS_LOG", "warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("configuration error: {e}");
            return ExitCode::from(2);
        }
    }
    let scenario = match cli::load_scenario(&args.scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions {
        seed: args.seed,
        tol: args.tol,
        resume: args.resume,
    };
    match cli::run(&scenario, &args.out, &opts) {
        Ok(report) => {
            if let Some(name) = &report.first_failure {
                eprintln!("check failed: {name}");
            }
            println!("{}", args.out.join("report.json").display());
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

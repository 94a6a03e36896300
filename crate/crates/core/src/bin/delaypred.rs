use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use delaypred::cli::{run, Overrides, EXIT_INVALID};

/// Runs a predictor design, prediction, simulation, sweep or bound
/// verification described by a JSON config.
#[derive(Debug, Parser)]
#[command(name = "delaypred", version)]
struct Args {
    /// Path to the JSON run configuration.
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for schedules and sweeps (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::init();
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID as u8);
        }
    }
    let outcome = run(
        &args.config,
        &Overrides {
            out: args.out,
            seed: args.seed,
        },
    );
    if outcome.exit_code == 0 {
        println!("{}", outcome.message);
    } else {
        eprintln!("error: {}", outcome.message);
    }
    ExitCode::from(outcome.exit_code as u8)
}

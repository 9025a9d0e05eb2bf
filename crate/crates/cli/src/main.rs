//! `unwash`: shrinkage fits with hidden-confounder adjustment, plus the
//! simulation and evaluation harness.
//!
//! Exit codes: 0 success, 1 input error, 2 fit did not converge (outputs are
//! still written).

mod evaluate;
mod fit;
mod io;
mod manifest;
mod simulate;

use std::process::ExitCode;
use std::time::Instant;

use clap::{error::ErrorKind, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "unwash", version, about)]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "UNWASH_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the mixture prior jointly with the hidden factors (MOUTHWASH).
    Fit(fit::FitArgs),
    /// Variational fit with a g-prior on the factors (BACKWASH).
    Backwash(fit::BackwashArgs),
    /// Simulate a two-group study by binomial thinning of base counts.
    Simulate(simulate::SimulateArgs),
    /// Score methods against simulation truth.
    Evaluate(evaluate::EvaluateArgs),
}

const EXIT_INPUT: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_INPUT,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_INPUT);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INPUT);
        }
    }
    let start = Instant::now();
    let (name, result) = match &cli.command {
        Command::Fit(a) => ("fit", fit::cmd_fit(a)),
        Command::Backwash(a) => ("backwash", fit::cmd_backwash(a)),
        Command::Simulate(a) => ("simulate", simulate::cmd_simulate(a)),
        Command::Evaluate(a) => ("evaluate", evaluate::cmd_evaluate(a)),
    };
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_INPUT);
        }
    };
    if let Err(e) = manifest::write(name, &outcome, start.elapsed().as_secs_f64()) {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_INPUT);
    }
    if outcome.converged == Some(false) {
        eprintln!(
            "warning: {name} did not converge; outputs written to {}",
            outcome.out_dir.display()
        );
        return ExitCode::from(EXIT_NOT_CONVERGED);
    }
    ExitCode::SUCCESS
}

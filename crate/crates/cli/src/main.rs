//! `sttf`: data conversion, synthetic data, training, evaluation, fusion,
//! ablation sweeps and a gradient self-test.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 a failed
//! invariant or tolerance.

mod ablate;
mod config;
mod convert;
mod error;
mod gradcheck;
mod run;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "sttf", version, about = "Skeleton action recognition with attention over groups of consecutive frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert capture text files to .sttd, or back
    Convert(convert::ConvertArgs),
    /// Write a synthetic train/eval dataset
    Synth(convert::SynthArgs),
    /// Train a model and write a run directory
    Train(run::TrainArgs),
    /// Evaluate a run's checkpoint
    Eval(run::EvalArgs),
    /// Fuse several runs (one per input mode) by averaging their scores
    Fuse(run::FuseArgs),
    /// Finite-difference check of every network gradient
    Gradcheck(gradcheck::GradcheckArgs),
    /// Train variants along one ablation axis and compare them
    Ablate(ablate::AblateArgs),
}

/// Caps rayon's worker count from `STTF_THREADS`.
fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("STTF_THREADS") else {
        return Ok(());
    };
    let n = v
        .trim()
        .parse::<usize>()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("STTF_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Failed(format!("cannot start {n} worker threads: {e}")))
}

fn dispatch(command: Command) -> CliResult<()> {
    init_threads()?;
    match command {
        Command::Convert(a) => convert::run(&a).map(|_| ()),
        Command::Synth(a) => convert::run_synth(&a),
        Command::Train(a) => run::run_train(&a),
        Command::Eval(a) => run::run_eval(&a),
        Command::Fuse(a) => run::run_fuse(&a),
        Command::Gradcheck(a) => gradcheck::run(&a),
        Command::Ablate(a) => ablate::run(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

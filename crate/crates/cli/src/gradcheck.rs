use std::path::PathBuf;

use clap::Args;
use sttformer::model::network_grad_check;

use crate::config::{create_dir, write_json, Preset, RunArgs};
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Model shape and seed; runs in 64-bit regardless of --precision
    #[command(flatten)]
    pub run: RunArgs,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Largest accepted relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Directory receiving gradcheck.json
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Checks every parameter gradient of a fresh network (tiny preset unless
/// configured otherwise). Fails with exit code 2 above tolerance.
pub fn run(args: &GradcheckArgs) -> CliResult<()> {
    let rc = args.run.resolve(Preset::Tiny)?;
    if !(args.eps > 0.0 && args.tol > 0.0) {
        return Err(CliError::Usage("--eps and --tol must be positive".into()));
    }
    let report = network_grad_check(&rc.model, rc.schedule.seed, args.eps)?;
    println!(
        "max relative error {:.3e} over {} coordinates ({} re-probed near kinks, {} skipped)",
        report.max_rel_error, report.coordinates, report.refined, report.skipped
    );
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_json(&out.join("gradcheck.json"), &report)?;
    }
    if report.max_rel_error.is_nan() || report.max_rel_error >= args.tol {
        return Err(CliError::Failed(format!(
            "max relative error {:.3e} is not below {:.0e} (input {}, index {}: analytic {:e}, numeric {:e})",
            report.max_rel_error, args.tol, report.worst.0, report.worst.1, report.analytic, report.numeric
        )));
    }
    if report.skipped * 20 >= report.coordinates {
        return Err(CliError::Failed(format!(
            "{} of {} coordinates sit on activation kinks; try another --seed",
            report.skipped,
            report.coordinates + report.skipped
        )));
    }
    Ok(())
}

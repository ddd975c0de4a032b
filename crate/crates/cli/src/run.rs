use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;
use sttformer::data::SkeletonSequence;
use sttformer::model::Model;
use sttformer::tensor::{Checkpoint, Real, Tensor};
use sttformer::train::{evaluate, fusion_report, predict_logits, train_observed, EvalReport, FusionAverage, FusionRow, RunDir};

use crate::config::{create_dir, read_existing, write_json, Datasets, Precision, Preset, RunArgs, RunConfig};
use crate::error::{usage, CliError, CliResult};

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Run directory (config.json, log.jsonl, checkpoints/)
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

pub fn run_train(args: &TrainArgs) -> CliResult<()> {
    let rc = args.run.resolve(Preset::Default)?;
    let data = rc.load()?;
    let dir = RunDir::create(&args.out)?;
    write_json(&dir.config(), &rc)?;
    match rc.precision {
        Precision::F32 => train_with::<f32>(&rc, &data, &dir),
        Precision::F64 => train_with::<f64>(&rc, &data, &dir),
    }
}

fn train_with<T: Real>(rc: &RunConfig, data: &Datasets, dir: &RunDir) -> CliResult<()> {
    let out = train_observed::<T>(&rc.model, &data.train, data.eval.as_deref(), &rc.schedule, Some(dir), |e| {
        let eval = e.eval_acc.map(|a| format!(" eval_acc {a:.4}")).unwrap_or_default();
        eprintln!(
            "epoch {:>3} lr {:.2e} loss {:.4} train_acc {:.4}{eval}",
            e.epoch, e.lr, e.train_loss, e.train_acc
        );
    })?;
    let best = &out.log[out.best_epoch];
    println!(
        "trained {} parameters for {} epochs; best epoch {} ({} {:.4}); run directory {}",
        out.model.num_params(),
        out.log.len(),
        out.best_epoch,
        if best.eval_acc.is_some() { "eval_acc" } else { "train_acc" },
        best.eval_acc.unwrap_or(best.train_acc),
        dir.root.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WhichCheckpoint {
    Best,
    Last,
}

/// A finished training run on disk.
pub struct Run {
    pub dir: RunDir,
    pub config: RunConfig,
}

impl Run {
    pub fn open(root: &Path) -> CliResult<Self> {
        let dir = RunDir { root: root.to_path_buf() };
        let text = read_existing(&dir.config(), "run config")?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", dir.config().display())))?;
        config.validate()?;
        Ok(Self { dir, config })
    }

    pub fn checkpoint(&self, which: WhichCheckpoint) -> CliResult<Checkpoint> {
        let path = match which {
            WhichCheckpoint::Best => self.dir.best(),
            WhichCheckpoint::Last => self.dir.last(),
        };
        if !path.is_file() {
            return usage(format!("checkpoint {} does not exist", path.display()));
        }
        Ok(Checkpoint::load(&path)?)
    }

    /// Eval-mode logits `[N, classes]` of the chosen checkpoint.
    pub fn logits(&self, ck: &Checkpoint, data: &[SkeletonSequence], batch_size: usize) -> CliResult<Tensor<f64>> {
        let cfg = self.config.model.clone();
        Ok(match self.config.precision {
            Precision::F32 => predict_logits(&Model::<f32>::from_checkpoint(cfg, ck)?, data, batch_size)?,
            Precision::F64 => predict_logits(&Model::<f64>::from_checkpoint(cfg, ck)?, data, batch_size)?,
        })
    }

    pub fn report(&self, ck: &Checkpoint, data: &[SkeletonSequence], batch_size: usize) -> CliResult<EvalReport> {
        let cfg = self.config.model.clone();
        Ok(match self.config.precision {
            Precision::F32 => evaluate(&Model::<f32>::from_checkpoint(cfg, ck)?, data, batch_size)?,
            Precision::F64 => evaluate(&Model::<f64>::from_checkpoint(cfg, ck)?, data, batch_size)?,
        })
    }

    fn eval_set(&self, override_dir: Option<&Path>) -> CliResult<Vec<SkeletonSequence>> {
        let mut rc = self.config.clone();
        if let Some(d) = override_dir {
            rc.eval_data = Some(d.to_path_buf());
            rc.split = None;
        }
        rc.load_eval()
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`
    #[arg(long, value_name = "DIR")]
    pub run: PathBuf,
    #[arg(long, value_enum, default_value = "best")]
    pub checkpoint: WhichCheckpoint,
    /// Evaluate on this directory instead of the run's eval data
    #[arg(long, value_name = "DIR")]
    pub eval_data: Option<PathBuf>,
    /// Where eval.json goes (default: the run directory)
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

pub fn run_eval(args: &EvalArgs) -> CliResult<()> {
    let run = Run::open(&args.run)?;
    let ck = run.checkpoint(args.checkpoint)?;
    let data = run.eval_set(args.eval_data.as_deref())?;
    let report = run.report(&ck, &data, args.batch_size)?;
    let out = args.out.clone().unwrap_or_else(|| run.dir.root.clone());
    create_dir(&out)?;
    write_json(&out.join("eval.json"), &report)?;
    println!("top-1 {:.4} on {} samples, mean loss {:.4}", report.top1, report.samples, report.mean_loss);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AverageArg {
    Logits,
    Probabilities,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Run directories to fuse, typically one per input mode
    #[arg(long, value_name = "DIR", num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "best")]
    pub checkpoint: WhichCheckpoint,
    /// Averaged quantity
    #[arg(long, value_enum, default_value = "logits")]
    pub average: AverageArg,
    /// Evaluate every run on this directory instead of its own eval data
    #[arg(long, value_name = "DIR")]
    pub eval_data: Option<PathBuf>,
    /// Directory receiving fusion.json
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

#[derive(Serialize)]
struct FusionFile {
    average: FusionAverage,
    samples: usize,
    rows: Vec<FusionRow>,
}

pub fn run_fuse(args: &FuseArgs) -> CliResult<()> {
    let average = match args.average {
        AverageArg::Logits => FusionAverage::Logits,
        AverageArg::Probabilities => FusionAverage::Probabilities,
    };
    let mut modes: Vec<(String, Tensor<f64>)> = Vec::new();
    let mut labels: Option<Vec<usize>> = None;
    for path in &args.runs {
        let run = Run::open(path)?;
        let ck = run.checkpoint(args.checkpoint)?;
        let data = run.eval_set(args.eval_data.as_deref())?;
        let these: Vec<usize> = data.iter().map(|s| s.label).collect();
        match &labels {
            Some(l) if *l != these => {
                return usage(format!(
                    "{} evaluates on a different sample set than {}",
                    path.display(),
                    args.runs[0].display()
                ))
            }
            _ => labels = Some(these),
        }
        let base = run.config.mode.name();
        let taken = modes.iter().filter(|(n, _)| n == base || n.starts_with(&format!("{base}#"))).count();
        let name = if taken == 0 { base.to_string() } else { format!("{base}#{}", taken + 1) };
        modes.push((name, run.logits(&ck, &data, args.batch_size)?));
    }
    let labels = labels.expect("at least one run");
    let rows = fusion_report(&modes, &labels, average)?;
    create_dir(&args.out)?;
    write_json(
        &args.out.join("fusion.json"),
        &FusionFile { average, samples: labels.len(), rows: rows.clone() },
    )?;
    println!("{:<10} {:>8}", "mode", "top-1");
    for r in &rows {
        println!("{:<10} {:>8.4}", r.name, r.top1);
    }
    Ok(())
}

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use sttformer::model::ModelConfig;
use sttformer::tensor::Real;
use sttformer::train::train;

use crate::config::{create_dir, write_json, Datasets, Precision, Preset, RunArgs, RunConfig};
use crate::convert::synth_sets;
use crate::error::{usage, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Sweep the tuple length over --n-list
    N,
    /// Full model against no positional encoding and no IFFA
    Components,
    /// n=1 against n=--stta-n, both with k1=k2=1
    Stta,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Base configuration (small preset unless configured otherwise)
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value = "n")]
    pub axis: Axis,
    /// Tuple lengths swept by `--axis n`
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,6")]
    pub n_list: Vec<usize>,
    /// Tuple length compared with n=1 by `--axis stta`
    #[arg(long, default_value_t = 6)]
    pub stta_n: usize,
    /// Synthetic training samples per class, used without --train-data
    #[arg(long, default_value_t = 16)]
    pub per_class: usize,
    /// Synthetic evaluation samples per class, used without --train-data
    #[arg(long, default_value_t = 64)]
    pub eval_per_class: usize,
    /// Directory receiving ablation.json and config.json
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Row {
    variant: String,
    n: usize,
    pe: bool,
    iffa: bool,
    k1: usize,
    k2: usize,
    params: usize,
    final_train_acc: f64,
    final_eval_acc: f64,
    best_eval_acc: f64,
    best_epoch: usize,
}

#[derive(Serialize)]
struct AblationFile<'a> {
    axis: Axis,
    rows: &'a [Row],
}

fn variants(args: &AblateArgs, base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    match args.axis {
        Axis::N => args
            .n_list
            .iter()
            .map(|&n| (format!("n={n}"), ModelConfig { n, ..base.clone() }))
            .collect(),
        Axis::Components => {
            let full = ModelConfig { pe_enabled: true, iffa_enabled: true, ..base.clone() };
            vec![
                ("full".into(), full.clone()),
                ("no-pe".into(), ModelConfig { pe_enabled: false, ..full.clone() }),
                ("no-iffa".into(), ModelConfig { iffa_enabled: false, ..full }),
            ]
        }
        Axis::Stta => [1, args.stta_n]
            .into_iter()
            .map(|n| (format!("n={n},k1=k2=1"), ModelConfig { n, k1: 1, k2: 1, ..base.clone() }))
            .collect(),
    }
}

pub fn run(args: &AblateArgs) -> CliResult<()> {
    let rc = args.run.resolve(Preset::Small)?;
    let variants = variants(args, &rc.model);
    if variants.is_empty() {
        return usage("nothing to compare: --n-list is empty");
    }
    for (name, cfg) in &variants {
        cfg.validate().map_err(|e| CliError::Usage(format!("variant {name}: {e}")))?;
    }
    let data = if rc.train_data.is_some() {
        rc.load()?
    } else {
        let m = &rc.model;
        let sets = synth_sets(m.num_classes, args.per_class, args.eval_per_class, m.t0, m.v0, rc.schedule.seed);
        Datasets {
            train: rc.prepare_all(&sets.train)?,
            eval: Some(rc.prepare_all(&sets.eval)?),
        }
    };
    if data.eval.as_ref().is_none_or(Vec::is_empty) {
        return usage("ablation needs evaluation data: pass --eval-data or --split");
    }
    create_dir(&args.out)?;
    write_json(&args.out.join("config.json"), &rc)?;
    let mut rows = Vec::new();
    for (name, cfg) in variants {
        eprintln!("training {name}");
        let row = match rc.precision {
            Precision::F32 => train_variant::<f32>(&rc, name, cfg, &data)?,
            Precision::F64 => train_variant::<f64>(&rc, name, cfg, &data)?,
        };
        rows.push(row);
    }
    write_json(&args.out.join("ablation.json"), &AblationFile { axis: args.axis, rows: &rows })?;
    println!("{:<14} {:>8} {:>10} {:>10} {:>10}", "variant", "params", "train", "eval", "best eval");
    for r in &rows {
        println!(
            "{:<14} {:>8} {:>10.4} {:>10.4} {:>10.4}",
            r.variant, r.params, r.final_train_acc, r.final_eval_acc, r.best_eval_acc
        );
    }
    Ok(())
}

fn train_variant<T: Real>(rc: &RunConfig, name: String, cfg: ModelConfig, data: &Datasets) -> CliResult<Row> {
    let out = train::<T>(&cfg, &data.train, data.eval.as_deref(), &rc.schedule, None)?;
    let last = out.log.last().expect("at least one epoch");
    Ok(Row {
        variant: name,
        n: cfg.n,
        pe: cfg.pe_enabled,
        iffa: cfg.iffa_enabled,
        k1: cfg.k1,
        k2: cfg.k2,
        params: out.model.num_params(),
        final_train_acc: last.train_acc,
        final_eval_acc: last.eval_acc.unwrap_or(f64::NAN),
        best_eval_acc: out.log[out.best_epoch].eval_acc.unwrap_or(f64::NAN),
        best_epoch: out.best_epoch,
    })
}

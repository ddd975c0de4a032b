use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{batch_tensor, SkeletonSequence};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{fsum, Checkpoint, Entry, Real, Tape, Tensor};

use super::eval::{argmax, evaluate};
use super::optim::OptimizerState;
use super::schedule::TrainSchedule;

/// One line of `log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
}

/// Model plus optimizer, stepping through epochs of a schedule.
pub struct Trainer<T: Real> {
    pub model: Model<T>,
    pub optimizer: OptimizerState<T>,
    schedule: TrainSchedule,
    tape: Tape<T>,
}

impl<T: Real> Trainer<T> {
    pub fn new(cfg: ModelConfig, schedule: TrainSchedule) -> Result<Self> {
        schedule.validate()?;
        let model = Model::new(cfg, schedule.seed)?;
        let optimizer = OptimizerState::new(schedule.lr, schedule.momentum, schedule.weight_decay);
        Ok(Self {
            model,
            optimizer,
            schedule,
            tape: Tape::new(),
        })
    }

    pub fn schedule(&self) -> &TrainSchedule {
        &self.schedule
    }

    /// One pass over `data` (last partial batch kept). Returns mean loss and
    /// accuracy of the train-mode predictions.
    pub fn run_epoch(&mut self, epoch: usize, data: &[SkeletonSequence]) -> Result<(f64, f64)> {
        check_dataset(self.model.config(), data)?;
        self.optimizer.lr = self.schedule.lr_at(epoch);
        let k = self.model.config().num_classes;
        let order = self.schedule.batch_order(data.len(), epoch);
        let mut losses = Vec::new();
        let mut correct = 0;
        for (step, idx) in order.chunks(self.schedule.batch_size).enumerate() {
            let batch: Vec<&SkeletonSequence> = idx.iter().map(|&i| &data[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
            let x = batch_tensor::<T>(&batch)?;

            self.tape.clear();
            let (logits, vars) = self.model.forward_train(&mut self.tape, &x)?;
            let loss = self.tape.softmax_cross_entropy(logits, &labels)?;
            let lv = self.tape.value(loss).item().as_f64();
            if !lv.is_finite() {
                return Err(Error::Divergence { epoch, step, loss: lv });
            }
            let rows = self.tape.value(logits).data();
            for (row, &y) in rows.chunks(k).zip(&labels) {
                let row: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
                correct += usize::from(argmax(&row) == y);
            }
            losses.push(lv * labels.len() as f64);

            let mut grads = self.tape.backward(loss)?;
            let grads: BTreeMap<String, Tensor<T>> = vars
                .into_iter()
                .filter_map(|(n, v)| grads.take(v).map(|g| (n, g)))
                .collect();
            self.optimizer.step(&mut self.model.params, &grads)?;
        }
        Ok((fsum(losses.iter().copied()) / data.len() as f64, correct as f64 / data.len() as f64))
    }

    /// Model state plus optimizer velocity and the epoch counter.
    pub fn checkpoint(&self, epoch: usize) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        self.optimizer.write_checkpoint(&mut ck);
        ck.insert("meta/epoch", Entry::from_slice::<f64>(&[], &[epoch as f64]));
        ck
    }
}

fn check_dataset(cfg: &ModelConfig, data: &[SkeletonSequence]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.num_classes < 2 {
        return Err(Error::Config("training needs at least two classes".into()));
    }
    for s in data {
        if s.label >= cfg.num_classes {
            return Err(Error::LabelOutOfRange {
                label: s.label,
                classes: cfg.num_classes,
            });
        }
        if s.frames() != cfg.t0 || s.joints() != cfg.v0 {
            return Err(Error::Config(format!(
                "sample has {} frames x {} joints, model expects {} x {} (pad sequences first)",
                s.frames(),
                s.joints(),
                cfg.t0,
                cfg.v0
            )));
        }
    }
    Ok(())
}

pub struct TrainOutcome<T: Real> {
    pub model: Model<T>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best: Checkpoint,
    pub last: Checkpoint,
}

/// Paths inside a run directory.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        let ck = root.join("checkpoints");
        std::fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn log(&self) -> PathBuf {
        self.root.join("log.jsonl")
    }

    pub fn best(&self) -> PathBuf {
        self.root.join("checkpoints").join("best.ckpt")
    }

    pub fn last(&self) -> PathBuf {
        self.root.join("checkpoints").join("last.ckpt")
    }
}

/// Full schedule on prepared `train_set`. The best checkpoint is chosen by
/// eval top-1 (train accuracy without an eval set), ties going to the later
/// epoch. With `run_dir`, the log and checkpoints are written as training
/// proceeds.
pub fn train<T: Real>(
    cfg: &ModelConfig,
    train_set: &[SkeletonSequence],
    eval_set: Option<&[SkeletonSequence]>,
    schedule: &TrainSchedule,
    run_dir: Option<&RunDir>,
) -> Result<TrainOutcome<T>> {
    train_observed(cfg, train_set, eval_set, schedule, run_dir, |_| {})
}

/// [`train`], calling `observe` after every epoch.
pub fn train_observed<T: Real>(
    cfg: &ModelConfig,
    train_set: &[SkeletonSequence],
    eval_set: Option<&[SkeletonSequence]>,
    schedule: &TrainSchedule,
    run_dir: Option<&RunDir>,
    mut observe: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::<T>::new(cfg.clone(), schedule.clone())?;
    if let Some(e) = eval_set {
        check_dataset(cfg, e)?;
    }
    let mut log_file = match run_dir {
        Some(d) => Some(std::fs::File::create(d.log()).map_err(|e| Error::io(d.log(), e))?),
        None => None,
    };
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut last = None;
    for epoch in 0..schedule.epochs {
        let (train_loss, train_acc) = trainer.run_epoch(epoch, train_set)?;
        let eval_acc = match eval_set {
            Some(e) => Some(evaluate(&trainer.model, e, schedule.batch_size)?.top1),
            None => None,
        };
        let entry = EpochLog {
            epoch,
            lr: schedule.lr_at(epoch),
            train_loss,
            train_acc,
            eval_acc,
        };
        let ck = trainer.checkpoint(epoch);
        let score = eval_acc.unwrap_or(train_acc);
        if best.as_ref().is_none_or(|(s, _, _)| score >= *s) {
            if let Some(d) = run_dir {
                ck.save(&d.best())?;
            }
            best = Some((score, epoch, ck.clone()));
        }
        if let (Some(d), Some(f)) = (run_dir, log_file.as_mut()) {
            ck.save(&d.last())?;
            writeln!(f, "{}", serde_json::to_string(&entry)?).map_err(|e| Error::io(d.log(), e))?;
        }
        last = Some(ck);
        observe(&entry);
        log.push(entry);
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model: trainer.model,
        log,
        best_epoch,
        best,
        last: last.expect("at least one epoch"),
    })
}

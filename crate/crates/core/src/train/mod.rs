//! Optimisation, metrics and multi-mode score fusion.

mod eval;
mod fusion;
mod optim;
mod schedule;
mod trainer;

pub use eval::{argmax, evaluate, predict_logits, report_from_logits, EvalReport};
pub use fusion::{fuse_modes, fused_scores, fusion_report, FusionAverage, FusionRow};
pub use optim::{OptimizerState, VELOCITY_PREFIX};
pub use schedule::TrainSchedule;
pub use trainer::{train, train_observed, EpochLog, RunDir, TrainOutcome, Trainer};

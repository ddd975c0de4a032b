use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimisation hyperparameters and step learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    /// Epochs at which the learning rate is multiplied by `decay`.
    pub milestones: Vec<usize>,
    pub decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 90,
            milestones: vec![60, 80],
            decay: 0.1,
            batch_size: 64,
            seed: 0,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("milestones {:?} must be strictly increasing", self.milestones)));
        }
        if self.milestones.last().is_some_and(|&m| m >= self.epochs) {
            return Err(Error::Config(format!("milestones {:?} must lie below epochs={}", self.milestones, self.epochs)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("need lr >= 0, momentum in [0, 1) and weight_decay >= 0".into()));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (zero-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * self.decay.powi(passed as i32)
    }

    /// Sample order for `epoch`, a function of `(seed, epoch)` only.
    pub fn batch_order(&self, samples: usize, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        let mut idx: Vec<usize> = (0..samples).collect();
        idx.shuffle(&mut rng);
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_schedule() {
        let s = TrainSchedule::default();
        assert_eq!(s.lr_at(0), 0.1);
        assert_eq!(s.lr_at(59), 0.1);
        assert!((s.lr_at(60) - 0.01).abs() < 1e-15);
        assert!((s.lr_at(79) - 0.01).abs() < 1e-15);
        assert!((s.lr_at(80) - 0.001).abs() < 1e-15);
        assert!((s.lr_at(89) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn plateaus() {
        let s = TrainSchedule {
            epochs: 50,
            milestones: vec![5, 17, 30],
            ..Default::default()
        };
        let lrs: Vec<f64> = (0..50).map(|e| s.lr_at(e)).collect();
        let changes = lrs.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(changes + 1, s.milestones.len() + 1);
        assert!((lrs[49] / lrs[0] - 0.1f64.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        TrainSchedule::default().validate().unwrap();
        for bad in [
            TrainSchedule { milestones: vec![80, 60], ..Default::default() },
            TrainSchedule { milestones: vec![60, 90], ..Default::default() },
            TrainSchedule { batch_size: 0, ..Default::default() },
            TrainSchedule { lr: -1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn order_is_a_seeded_permutation() {
        let s = TrainSchedule::default();
        let a = s.batch_order(20, 3);
        assert_eq!(a, s.batch_order(20, 3));
        assert_ne!(a, s.batch_order(20, 4));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    }
}

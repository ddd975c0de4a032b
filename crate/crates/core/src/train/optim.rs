use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::decays;
use crate::tensor::{Checkpoint, Entry, Real, Tensor};

pub const VELOCITY_PREFIX: &str = "velocity/";

/// SGD with Nesterov momentum:
/// `g = grad + wd*p; v = m*v + g; p -= lr * (g + m*v)`.
///
/// Weight decay only touches tensors named `*.weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Real> {
    pub velocity: BTreeMap<String, Vec<T>>,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            velocity: BTreeMap::new(),
            lr,
            momentum,
            weight_decay,
        }
    }

    /// One update of every tensor in `params`. A parameter without a
    /// gradient is treated as having a zero gradient.
    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor<T>>, grads: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient { name: name.clone() });
            }
            if params.get(name).is_none_or(|p| p.shape() != g.shape()) {
                return Err(Error::invalid("sgd_nesterov_step", format!("gradient `{name}` does not match a parameter")));
            }
        }
        let (lr, m) = (T::of(self.lr), T::of(self.momentum));
        for (name, p) in params.iter_mut() {
            let wd = T::of(if decays(name) { self.weight_decay } else { 0.0 });
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| vec![T::zero(); p.numel()]);
            let grad = grads.get(name).map(Tensor::data);
            for (i, (pi, vi)) in p.data_mut().iter_mut().zip(v.iter_mut()).enumerate() {
                let g = grad.map_or(T::zero(), |gs| gs[i]) + wd * *pi;
                *vi = m * *vi + g;
                *pi = *pi - lr * (g + m * *vi);
            }
        }
        Ok(())
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint) {
        for (n, v) in &self.velocity {
            ck.insert(format!("{VELOCITY_PREFIX}{n}"), Entry::from_slice(&[v.len()], v));
        }
    }
}

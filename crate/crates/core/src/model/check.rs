use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{grad_check_many, GradCheckReport, Tensor, Var};

use super::{Model, ModelConfig, Session};

/// Finite-difference check of the training loss against every parameter of
/// a freshly initialised `cfg` network, in 64-bit. The input batch holds two
/// samples, the second with only one person present. Relation biases start
/// from small random values instead of zero.
pub fn network_grad_check(cfg: &ModelConfig, seed: u64, eps: f64) -> Result<GradCheckReport> {
    let model = Model::<f64>::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |shape: &[usize], scale: f64| Tensor::from_fn(shape, |_| scale * rng.random_range(-1.0..1.0));
    let names: Vec<String> = model.params.keys().cloned().collect();
    let inputs: Vec<Tensor<f64>> = model
        .params
        .iter()
        .map(|(n, p)| if n.ends_with(".sgr") { uniform(p.shape(), 0.2) } else { p.clone() })
        .collect();
    let mut x = uniform(&[2, 3, cfg.t0, cfg.v0, 2], 1.0);
    let per = x.numel() / 2;
    for (i, v) in x.data_mut()[per..].iter_mut().enumerate() {
        if i % 2 == 1 {
            *v = 0.0;
        }
    }
    let labels = [0, cfg.num_classes - 1];
    grad_check_many(
        |tape, vars| {
            let map: BTreeMap<String, Var> = names.iter().cloned().zip(vars.iter().copied()).collect();
            let mut stats = model.stats.clone();
            let logits = Session::train(tape, cfg, &map, &mut stats).forward(&x)?;
            tape.softmax_cross_entropy(logits, &labels)
        },
        &inputs,
        eps,
    )
}

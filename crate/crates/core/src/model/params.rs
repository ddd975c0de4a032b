use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::tensor::{Real, RunningStats, Tensor};

use super::config::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanInUniform(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Conv and linear weights take weight decay; biases, norms and the
/// attention bias do not.
pub fn decays(name: &str) -> bool {
    name.ends_with(".weight")
}

pub fn layer_prefix(i: usize) -> String {
    format!("layer{i:02}")
}

struct Registry {
    params: Vec<ParamSpec>,
    norms: Vec<(String, usize)>,
}

impl Registry {
    fn conv(&mut self, name: &str, cout: usize, cin: usize, kh: usize, kw: usize, bias: bool) {
        self.params.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![cout, cin, kh, kw],
            init: Init::FanInUniform(cin * kh * kw),
        });
        if bias {
            self.params.push(ParamSpec {
                name: format!("{name}.bias"),
                shape: vec![cout],
                init: Init::Zeros,
            });
        }
    }

    fn norm(&mut self, name: &str, c: usize) {
        for (p, init) in [("gamma", Init::Ones), ("beta", Init::Zeros)] {
            self.params.push(ParamSpec {
                name: format!("{name}.{p}"),
                shape: vec![c],
                init,
            });
        }
        self.norms.push((name.to_string(), c));
    }
}

/// Trainable tensors and batch-norm layers of a network, in name order.
pub fn registry(cfg: &ModelConfig) -> (Vec<ParamSpec>, Vec<(String, usize)>) {
    let mut r = Registry {
        params: Vec::new(),
        norms: Vec::new(),
    };
    let (h, d, v) = (cfg.heads, cfg.qk_dim_per_head, cfg.tuple_joints());
    r.conv("feature.conv", cfg.c1, 3, 1, 1, false);
    r.norm("feature.bn", cfg.c1);
    r.conv("encode.conv", cfg.c1, cfg.c1, 1, 1, true);
    for i in 0..cfg.layers() {
        let p = layer_prefix(i);
        let (cin, cout) = cfg.layer_io(i);
        r.conv(&format!("{p}.q"), h * d, cin, 1, 1, true);
        r.conv(&format!("{p}.k"), h * d, cin, 1, 1, true);
        r.conv(&format!("{p}.v"), cout, cin, 1, 1, true);
        if cfg.sgr_enabled {
            r.params.push(ParamSpec {
                name: format!("{p}.sgr"),
                shape: vec![h, v, v],
                init: Init::Zeros,
            });
        }
        r.conv(&format!("{p}.out"), cout, cout, 1, cfg.k1, false);
        r.norm(&format!("{p}.out_bn"), cout);
        if cin != cout {
            r.conv(&format!("{p}.res"), cout, cin, 1, 1, false);
            r.norm(&format!("{p}.res_bn"), cout);
        }
        r.conv(&format!("{p}.ff"), cout, cout, 1, 1, false);
        r.norm(&format!("{p}.ff_bn"), cout);
        if cfg.iffa_enabled {
            r.conv(&format!("{p}.iffa"), cout, cout, cfg.k2, 1, false);
            r.norm(&format!("{p}.iffa_bn"), cout);
        }
    }
    let last = cfg.channels[cfg.layers() - 1];
    r.params.push(ParamSpec {
        name: "head.weight".into(),
        shape: vec![cfg.num_classes, last],
        init: Init::FanInUniform(last),
    });
    r.params.push(ParamSpec {
        name: "head.bias".into(),
        shape: vec![cfg.num_classes],
        init: Init::Zeros,
    });
    r.params.sort_by(|a, b| a.name.cmp(&b.name));
    r.norms.sort();
    (r.params, r.norms)
}

/// Draws a parameter from its own stream keyed by `(seed, name)`, so adding
/// or removing a tensor never shifts the values of the others.
pub fn init_param<T: Real>(spec: &ParamSpec, seed: u64) -> Tensor<T> {
    match spec.init {
        Init::Zeros => Tensor::zeros(&spec.shape),
        Init::Ones => Tensor::full(&spec.shape, T::one()),
        Init::FanInUniform(fan_in) => {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(spec.name.as_bytes());
            let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(&spec.shape, |_| T::of(rng.random_range(-bound..bound)))
        }
    }
}

pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> (BTreeMap<String, Tensor<T>>, BTreeMap<String, RunningStats<T>>) {
    let (specs, norms) = registry(cfg);
    let params = specs.iter().map(|s| (s.name.clone(), init_param(s, seed))).collect();
    let stats = norms.into_iter().map(|(n, c)| (n, RunningStats::new(c))).collect();
    (params, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_matches_closed_form() {
        for cfg in [
            ModelConfig::default(),
            ModelConfig::tiny(),
            ModelConfig::small(),
            ModelConfig {
                sgr_enabled: false,
                iffa_enabled: false,
                k1: 3,
                ..ModelConfig::small()
            },
        ] {
            let total: usize = registry(&cfg).0.iter().map(ParamSpec::numel).sum();
            assert_eq!(total, cfg.count_params());
        }
    }

    #[test]
    fn default_count() {
        // hand tally of the layer formulas for the default configuration
        let v = 150usize;
        let layer = |cin: usize, cout: usize| {
            2 * (cin * 64 + 64) + (cin * cout + cout) + 4 * v * v + (cout * cout + 2 * cout)
                + if cin != cout { cin * cout + 2 * cout } else { 0 }
                + (cout * cout + 2 * cout)
                + (3 * cout * cout + 2 * cout)
        };
        let widths = [64, 64, 64, 128, 128, 256, 256, 256, 256];
        let body: usize = widths.windows(2).map(|w| layer(w[0], w[1])).sum();
        let expect = (3 * 64 + 128) + (64 * 64 + 64) + body + 257 * 60;
        assert_eq!(ModelConfig::default().count_params(), expect);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = ModelConfig::tiny();
        let (a, sa) = init_params::<f64>(&cfg, 3);
        let (b, _) = init_params::<f64>(&cfg, 3);
        let (c, _) = init_params::<f64>(&cfg, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let w = &a["layer00.q.weight"];
        let bound = 1.0 / 8f64.sqrt();
        assert!(w.data().iter().all(|x| x.abs() <= bound));
        assert!(a["layer00.sgr"].data().iter().all(|&x| x == 0.0));
        assert!(a["layer01.ff_bn.gamma"].data().iter().all(|&x| x == 1.0));
        assert_eq!(sa["feature.bn"].mean, vec![0.0; 8]);
    }

    #[test]
    fn decay_rule() {
        assert!(decays("layer00.q.weight"));
        assert!(decays("head.weight"));
        for n in ["layer00.q.bias", "layer00.sgr", "feature.bn.gamma", "feature.bn.beta"] {
            assert!(!decays(n), "{n}");
        }
    }
}

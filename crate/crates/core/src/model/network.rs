use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Checkpoint, Entry, Mode, Real, RunningStats, Tape, Tensor, Var};

use super::config::ModelConfig;
use super::params::{init_params, layer_prefix, registry};
use super::pe::positional_encoding;

/// Switches for isolating parts of a block in tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageToggles {
    pub norm: bool,
    pub residual: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            norm: true,
            residual: true,
        }
    }
}

enum Stats<'a, T: Real> {
    Update(&'a mut BTreeMap<String, RunningStats<T>>),
    Frozen(&'a BTreeMap<String, RunningStats<T>>),
}

/// One forward pass: parameters already bound to tape variables.
pub struct Session<'a, T: Real> {
    pub tape: &'a mut Tape<T>,
    vars: &'a BTreeMap<String, Var>,
    stats: Stats<'a, T>,
    cfg: &'a ModelConfig,
    mode: Mode,
    toggles: StageToggles,
}

impl<'a, T: Real> Session<'a, T> {
    /// Train-mode session that folds batch statistics into `stats`.
    pub fn train(
        tape: &'a mut Tape<T>,
        cfg: &'a ModelConfig,
        vars: &'a BTreeMap<String, Var>,
        stats: &'a mut BTreeMap<String, RunningStats<T>>,
    ) -> Self {
        Self {
            tape,
            vars,
            stats: Stats::Update(stats),
            cfg,
            mode: Mode::Train,
            toggles: StageToggles::default(),
        }
    }

    /// Eval-mode session reading running statistics.
    pub fn eval(
        tape: &'a mut Tape<T>,
        cfg: &'a ModelConfig,
        vars: &'a BTreeMap<String, Var>,
        stats: &'a BTreeMap<String, RunningStats<T>>,
    ) -> Self {
        Self {
            tape,
            vars,
            stats: Stats::Frozen(stats),
            cfg,
            mode: Mode::Eval,
            toggles: StageToggles::default(),
        }
    }

    pub fn with_toggles(mut self, toggles: StageToggles) -> Self {
        self.toggles = toggles;
        self
    }

    fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter `{name}` is not bound")))
    }

    fn conv(&mut self, x: Var, name: &str, bias: bool, padding: (usize, usize)) -> Result<Var> {
        let w = self.var(&format!("{name}.weight"))?;
        let b = if bias { Some(self.var(&format!("{name}.bias"))?) } else { None };
        self.tape.conv2d(x, w, b, (1, 1), padding)
    }

    fn bn(&mut self, x: Var, name: &str) -> Result<Var> {
        if !self.toggles.norm {
            return Ok(x);
        }
        let gamma = self.var(&format!("{name}.gamma"))?;
        let beta = self.var(&format!("{name}.beta"))?;
        let (eps, momentum) = (T::of(self.cfg.bn_eps), T::of(self.cfg.bn_momentum));
        let missing = || Error::Config(format!("no running statistics for `{name}`"));
        match &mut self.stats {
            Stats::Update(map) => {
                let s = map.get_mut(name).ok_or_else(missing)?;
                self.tape.batch_norm(x, gamma, beta, s, self.mode, eps, momentum)
            }
            Stats::Frozen(map) => {
                let mut s = map.get(name).ok_or_else(missing)?.clone();
                self.tape.batch_norm(x, gamma, beta, &mut s, Mode::Eval, eps, momentum)
            }
        }
    }

    fn act(&mut self, x: Var) -> Result<Var> {
        self.tape.leaky_relu(x, T::of(self.cfg.leaky_slope))
    }

    fn residual(&mut self, x: Var, skip: Var) -> Result<Var> {
        if self.toggles.residual {
            self.tape.add(x, skip)
        } else {
            Ok(x)
        }
    }

    /// `[B, 3, T0, V0] -> [B, C1, T0, V0]`.
    pub fn feature_map(&mut self, x: Var) -> Result<Var> {
        let s = self.tape.shape(x);
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::shape("feature_map", "input [B, 3, T0, V0]", "3 channels", format!("{s:?}")));
        }
        let y = self.conv(x, "feature.conv", false, (0, 0))?;
        let y = self.bn(y, "feature.bn")?;
        self.act(y)
    }

    /// `[B, C1, T0, V0] -> [B, C1, T0/n, n*V0]`.
    pub fn tuple_encode(&mut self, x: Var) -> Result<Var> {
        let s = self.tape.shape(x).to_vec();
        let (n, t0, v0) = (self.cfg.n, self.cfg.t0, self.cfg.v0);
        if s.len() != 4 || s[2] != t0 || s[3] != v0 {
            return Err(Error::shape("tuple_encode", "input [B, C, T0, V0]", format!("[_, _, {t0}, {v0}]"), format!("{s:?}")));
        }
        crate::data::check_tuple_len(t0, n)?;
        let y = self.tape.reshape(x, &[s[0], s[1], t0 / n, n * v0])?;
        let y = self.conv(y, "encode.conv", true, (0, 0))?;
        self.act(y)
    }

    /// Adds the joint-position table to every tuple.
    pub fn add_positional(&mut self, x: Var) -> Result<Var> {
        let s = self.tape.shape(x).to_vec();
        let (c, t, v) = (s[1], s[2], s[3]);
        let pe = positional_encoding::<T>(c, v)?;
        let tiled = Tensor::from_fn(&[c, t, v], |i| pe.data()[(i / (t * v)) * v + i % v]);
        let pe = self.tape.constant(tiled);
        self.tape.add_suffix(x, pe)
    }

    /// Multi-head tanh attention of layer `i`, heads merged back onto
    /// channels: `[B, C_in, T, V] -> [B, C_out, T, V]`.
    pub fn attention(&mut self, i: usize, x: Var) -> Result<Var> {
        let p = layer_prefix(i);
        let (h, d) = (self.cfg.heads, self.cfg.qk_dim_per_head);
        let s = self.tape.shape(x).to_vec();
        let (b, t, v) = (s[0], s[2], s[3]);
        let (_, cout) = self.cfg.layer_io(i);
        if cout % h != 0 {
            return Err(Error::Config(format!("width {cout} not divisible by {h} heads")));
        }
        let dv = cout / h;

        let q = self.conv(x, &format!("{p}.q"), true, (0, 0))?;
        let q = self.tape.reshape(q, &[b, h, d, t, v])?;
        let q = self.tape.transpose(q, &[0, 3, 1, 4, 2])?; // [B, T, h, V, d]
        let k = self.conv(x, &format!("{p}.k"), true, (0, 0))?;
        let k = self.tape.reshape(k, &[b, h, d, t, v])?;
        let k = self.tape.transpose(k, &[0, 3, 1, 2, 4])?; // [B, T, h, d, V]
        let val = self.conv(x, &format!("{p}.v"), true, (0, 0))?;
        let val = self.tape.reshape(val, &[b, h, dv, t, v])?;
        let val = self.tape.transpose(val, &[0, 3, 1, 4, 2])?; // [B, T, h, V, dv]

        let logits = self.tape.batched_matmul(q, k)?;
        let mut logits = self.tape.scale(logits, T::of(1.0 / (d as f64).sqrt()))?;
        if self.cfg.sgr_enabled {
            let r = self.var(&format!("{p}.sgr"))?;
            logits = self.tape.add_suffix(logits, r)?;
        }
        let a = self.tape.tanh(logits)?;
        let o = self.tape.batched_matmul(a, val)?;
        let o = self.tape.transpose(o, &[0, 2, 4, 1, 3])?; // [B, h, dv, T, V]
        self.tape.reshape(o, &[b, cout, t, v])
    }

    /// Attention, output projection and feed-forward of layer `i`.
    pub fn stta(&mut self, i: usize, x: Var) -> Result<Var> {
        let p = layer_prefix(i);
        let (cin, cout) = self.cfg.layer_io(i);
        let a = self.attention(i, x)?;
        let y = self.conv(a, &format!("{p}.out"), false, (0, self.cfg.k1 / 2))?;
        let y = self.bn(y, &format!("{p}.out_bn"))?;
        let skip = if cin != cout {
            let r = self.conv(x, &format!("{p}.res"), false, (0, 0))?;
            self.bn(r, &format!("{p}.res_bn"))?
        } else {
            x
        };
        let y = self.residual(y, skip)?;
        let y = self.act(y)?;
        let f = self.conv(y, &format!("{p}.ff"), false, (0, 0))?;
        let f = self.bn(f, &format!("{p}.ff_bn"))?;
        let f = self.residual(f, y)?;
        self.act(f)
    }

    /// Temporal aggregation across tuples for layer `i`.
    pub fn iffa(&mut self, i: usize, x: Var) -> Result<Var> {
        let p = layer_prefix(i);
        let y = self.conv(x, &format!("{p}.iffa"), false, (self.cfg.k2 / 2, 0))?;
        let y = self.bn(y, &format!("{p}.iffa_bn"))?;
        let y = self.residual(y, x)?;
        self.act(y)
    }

    /// Single-person logits: `[P, 3, T0, V0] -> [P, num_classes]`.
    pub fn forward_persons(&mut self, x: Var) -> Result<Var> {
        let y = self.feature_map(x)?;
        let mut y = self.tuple_encode(y)?;
        if self.cfg.pe_enabled {
            y = self.add_positional(y)?;
        }
        for i in 0..self.cfg.layers() {
            y = self.stta(i, y).map_err(|e| e.in_layer(i))?;
            if self.cfg.iffa_enabled {
                y = self.iffa(i, y).map_err(|e| e.in_layer(i))?;
            }
        }
        let g = self.tape.global_avg_pool(y)?;
        let (w, b) = (self.var("head.weight")?, self.var("head.bias")?);
        self.tape.linear(g, w, Some(b))
    }

    /// Per-sample logits for `[B, 3, T0, V0, M]`: the sum of per-person
    /// logits over persons with any nonzero coordinate (person 0 when all
    /// are empty).
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Var> {
        let (persons, owners) = gather_persons(x)?;
        let b = x.shape()[0];
        let xs = self.tape.constant(persons);
        let logits = self.forward_persons(xs)?;
        self.tape.segment_sum(logits, &owners, b)
    }
}

/// Splits `[B, 3, T, V, M]` into a `[P, 3, T, V]` stack of non-empty persons
/// and the sample index of each.
pub fn gather_persons<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let &[b, c, t, v, m] = x.shape() else {
        return Err(Error::shape("forward", "input rank", "5 ([B, 3, T0, V0, M])", x.rank()));
    };
    let plane = t * v;
    let sample = c * plane * m;
    let mut data = Vec::new();
    let mut owners = Vec::new();
    for bi in 0..b {
        let xs = &x.data()[bi * sample..(bi + 1) * sample];
        let occupied = |pm: usize| xs.iter().skip(pm).step_by(m).any(|&val| val != T::zero());
        let mut chosen: Vec<usize> = (0..m).filter(|&pm| occupied(pm)).collect();
        if chosen.is_empty() {
            chosen.push(0);
        }
        for pm in chosen {
            data.extend(xs.iter().skip(pm).step_by(m).copied());
            owners.push(bi);
        }
    }
    Ok((Tensor::new(vec![owners.len(), c, t, v], data)?, owners))
}

/// Parameters and batch-norm statistics of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real> {
    cfg: ModelConfig,
    pub params: BTreeMap<String, Tensor<T>>,
    pub stats: BTreeMap<String, RunningStats<T>>,
}

pub const PARAM_PREFIX: &str = "param/";
pub const BUFFER_PREFIX: &str = "buffer/";

impl<T: Real> Model<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (params, stats) = init_params(&cfg, seed);
        Ok(Self { cfg, params, stats })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Records every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BTreeMap<String, Var> {
        self.params
            .iter()
            .map(|(n, p)| (n.clone(), tape.param(p.clone())))
            .collect()
    }

    pub fn train_session<'a>(&'a mut self, tape: &'a mut Tape<T>, vars: &'a BTreeMap<String, Var>) -> Session<'a, T> {
        Session::train(tape, &self.cfg, vars, &mut self.stats)
    }

    pub fn eval_session<'a>(&'a self, tape: &'a mut Tape<T>, vars: &'a BTreeMap<String, Var>) -> Session<'a, T> {
        Session::eval(tape, &self.cfg, vars, &self.stats)
    }

    /// Train-mode forward; updates running statistics.
    pub fn forward_train(&mut self, tape: &mut Tape<T>, x: &Tensor<T>) -> Result<(Var, BTreeMap<String, Var>)> {
        let vars = self.bind(tape);
        let logits = self.train_session(tape, &vars).forward(x)?;
        Ok((logits, vars))
    }

    /// Eval-mode forward with frozen statistics.
    pub fn forward_eval(&self, tape: &mut Tape<T>, x: &Tensor<T>) -> Result<Var> {
        let vars = self.bind(tape);
        self.eval_session(tape, &vars).forward(x)
    }

    /// Eval-mode logits as a plain tensor.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let v = self.forward_eval(&mut tape, x)?;
        Ok(tape.value(v).clone())
    }

    /// Copy of the model in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            params: self.params.iter().map(|(n, p)| (n.clone(), p.cast())).collect(),
            stats: self
                .stats
                .iter()
                .map(|(n, s)| {
                    let conv = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect();
                    (n.clone(), RunningStats { mean: conv(&s.mean), var: conv(&s.var) })
                })
                .collect(),
        }
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint) {
        for (n, p) in &self.params {
            ck.insert(format!("{PARAM_PREFIX}{n}"), Entry::from_tensor(p));
        }
        for (n, s) in &self.stats {
            let c = s.channels();
            ck.insert(format!("{BUFFER_PREFIX}{n}.running_mean"), Entry::from_slice(&[c], &s.mean));
            ck.insert(format!("{BUFFER_PREFIX}{n}.running_var"), Entry::from_slice(&[c], &s.var));
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.cfg.digest());
        self.write_checkpoint(&mut ck);
        ck
    }

    /// Rebuilds a model saved by [`Model::to_checkpoint`] for `cfg`.
    pub fn from_checkpoint(cfg: ModelConfig, ck: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        if ck.config_digest != cfg.digest() {
            return Err(Error::Checkpoint("config digest does not match this model configuration".into()));
        }
        let (specs, norms) = registry(&cfg);
        let mut params = BTreeMap::new();
        for s in specs {
            let e = ck.get(&format!("{PARAM_PREFIX}{}", s.name))?;
            if e.shape != s.shape {
                return Err(Error::Checkpoint(format!("`{}` has shape {:?}, expected {:?}", s.name, e.shape, s.shape)));
            }
            params.insert(s.name, e.to_tensor()?);
        }
        let mut stats = BTreeMap::new();
        for (n, c) in norms {
            let mean = ck.get(&format!("{BUFFER_PREFIX}{n}.running_mean"))?;
            let var = ck.get(&format!("{BUFFER_PREFIX}{n}.running_var"))?;
            if mean.shape != [c] || var.shape != [c] {
                return Err(Error::Checkpoint(format!("running statistics of `{n}` have the wrong size")));
            }
            stats.insert(n, RunningStats { mean: mean.to_vec(), var: var.to_vec() });
        }
        Ok(Self { cfg, params, stats })
    }
}

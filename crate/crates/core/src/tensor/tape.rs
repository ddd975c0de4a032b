//! Record-on-execute reverse-mode differentiation.
//!
//! Every op evaluates eagerly, stores its output on the [`Tape`] and returns
//! a [`Var`] handle. [`Tape::backward`] replays the records in reverse. Leaves
//! created with [`Tape::param`] are trainable; everything derived only from
//! [`Tape::constant`] leaves is skipped during the backward pass.

use crate::error::{Error, Result};

use super::array::{inverse_permutation, strides, Tensor};
use super::kernels::{self, ConvGeom};
use super::real::Real;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    index: u32,
    generation: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

/// Train or eval behaviour for batch normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running mean and variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Exponential moving update from a batch's biased statistics over
    /// `count` values per channel; the variance is stored unbiased.
    pub fn update(&mut self, batch_mean: &[T], batch_var: &[T], count: usize, momentum: T) {
        let unbias = T::of(count as f64 / (count as f64 - 1.0));
        let keep = T::one() - momentum;
        for c in 0..self.mean.len() {
            self.mean[c] = keep * self.mean[c] + momentum * batch_mean[c];
            self.var[c] = keep * self.var[c] + momentum * batch_var[c] * unbias;
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddSuffix { x: Var, r: Var },
    Sum(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    LeakyRelu { x: Var, slope: T },
    Tanh(Var),
    Matmul { a: Var, b: Var },
    Reshape(Var),
    Permute { x: Var, axes: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    GlobalAvgPool(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    SegmentSum { x: Var, segments: Vec<usize> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    generation: u32,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. `var`, or `None` when `var` is not
    /// trainable or does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        if var.generation != self.generation {
            return None;
        }
        self.grads.get(var.index()).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        if var.generation != self.generation {
            return None;
        }
        self.grads.get_mut(var.index()).and_then(Option::take)
    }
}

/// Recording of one forward computation.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    generation: u32,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            generation: 0,
        }
    }

    /// Drops every record. Handles issued before the call become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.generation = self.generation.wrapping_add(1);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Sign of every leaky ReLU input recorded so far: the points at which
    /// the taped function is not differentiable.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for n in &self.nodes {
            if let Op::LeakyRelu { x, .. } = n.op {
                sig.extend(self.nodes[x.index()].value.data().iter().map(|&v| v >= T::zero()));
            }
        }
        sig
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        self.check(var).expect("stale variable");
        &self.nodes[var.index()].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.value(var).shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let index = u32::try_from(self.nodes.len()).expect("tape too long");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            index,
            generation: self.generation,
        }
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.generation != self.generation || var.index() >= self.nodes.len() {
            return Err(Error::StaleVar {
                expected: self.generation,
                found: var.generation,
            });
        }
        Ok(())
    }

    fn node(&self, var: Var) -> Result<&Node<T>> {
        self.check(var)?;
        Ok(&self.nodes[var.index()])
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.index()].requires_grad)
    }

    // ----------------------------------------------------------------
    // Elementwise

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.node(a)?.value, &self.node(b)?.value);
        same_shape("add", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.node(a)?.value, &self.node(b)?.value);
        same_shape("mul", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let out = self.node(x)?.value.map(|v| v * s);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Scale(x, s), rg))
    }

    /// `x + r` where `r`'s shape equals the trailing axes of `x`; `r` is
    /// repeated over the leading axes.
    pub fn add_suffix(&mut self, x: Var, r: Var) -> Result<Var> {
        let (vx, vr) = (&self.node(x)?.value, &self.node(r)?.value);
        let (xs, rs) = (vx.shape(), vr.shape());
        if rs.len() > xs.len() || xs[xs.len() - rs.len()..] != *rs {
            return Err(Error::shape(
                "add_suffix",
                "trailing axes",
                format!("{:?}", &xs[xs.len().saturating_sub(rs.len())..]),
                format!("{rs:?}"),
            ));
        }
        let n = vr.numel();
        let rd = vr.data();
        let data = vx
            .data()
            .chunks(n)
            .flat_map(|c| c.iter().zip(rd).map(|(&a, &b)| a + b))
            .collect();
        let out = Tensor::new(xs.to_vec(), data)?;
        let rg = self.rg(&[x, r]);
        Ok(self.push(out, Op::AddSuffix { x, r }, rg))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = T::sum_slice(self.node(x)?.value.data());
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    /// `max(x, slope·x)` elementwise; the derivative at exactly 0 is taken
    /// from the positive branch (1).
    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        let out = self.node(x)?.value.map(|v| if v >= T::zero() { v } else { slope * v });
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::LeakyRelu { x, slope }, rg))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.node(x)?.value.map(|v| v.tanh());
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Tanh(x), rg))
    }

    // ----------------------------------------------------------------
    // Shape manipulation

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.node(x)?.value.clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn transpose(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let out = self.node(x)?.value.permute(axes)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Permute { x, axes: axes.to_vec() }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = self.node(*first)?.value.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range for rank {}", base.len())));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.node(v)?.value.shape();
            if s.len() != base.len() {
                return Err(Error::shape("concat", "rank", base.len(), s.len()));
            }
            for (ax, (&a, &b)) in base.iter().zip(s).enumerate() {
                if ax != axis && a != b {
                    return Err(Error::shape("concat", format!("axis {ax}"), a, b));
                }
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = &self.nodes[v.index()].value;
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Sums rows of `x` (leading axis) into `num_segments` groups.
    pub fn segment_sum(&mut self, x: Var, segments: &[usize], num_segments: usize) -> Result<Var> {
        let vx = &self.node(x)?.value;
        let s = vx.shape();
        if s.is_empty() || s[0] != segments.len() {
            return Err(Error::shape("segment_sum", "axis 0", segments.len(), s.first().copied().unwrap_or(0)));
        }
        if let Some(&bad) = segments.iter().find(|&&g| g >= num_segments) {
            return Err(Error::invalid("segment_sum", format!("segment {bad} >= {num_segments}")));
        }
        let row: usize = s[1..].iter().product();
        let mut data = vec![T::zero(); num_segments * row];
        for (i, &g) in segments.iter().enumerate() {
            for (o, &v) in data[g * row..(g + 1) * row].iter_mut().zip(&vx.data()[i * row..(i + 1) * row]) {
                *o = *o + v;
            }
        }
        let mut shape = s.to_vec();
        shape[0] = num_segments;
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::SegmentSum {
                x,
                segments: segments.to_vec(),
            },
            rg,
        ))
    }

    // ----------------------------------------------------------------
    // Layers

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let (vx, vw) = (&self.node(x)?.value, &self.node(w)?.value);
        let (xs, ws) = (vx.shape(), vw.shape());
        if xs.len() != 4 {
            return Err(Error::shape("conv2d", "input rank", 4, xs.len()));
        }
        if ws.len() != 4 {
            return Err(Error::shape("conv2d", "weight rank", 4, ws.len()));
        }
        if ws[1] != xs[1] {
            return Err(Error::shape("conv2d", "input channels (axis 1)", ws[1], xs[1]));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        if ws[2] > xs[2] + 2 * padding.0 {
            return Err(Error::shape("conv2d", "kernel height (axis 2)", format!("<= {}", xs[2] + 2 * padding.0), ws[2]));
        }
        if ws[3] > xs[3] + 2 * padding.1 {
            return Err(Error::shape("conv2d", "kernel width (axis 3)", format!("<= {}", xs[3] + 2 * padding.1), ws[3]));
        }
        let geom = ConvGeom {
            batch: xs[0],
            c_in: xs[1],
            c_out: ws[0],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad: padding,
        };
        let bias = match b {
            Some(bv) => {
                let t = &self.node(bv)?.value;
                if t.shape() != [geom.c_out] {
                    return Err(Error::shape("conv2d", "bias extent", geom.c_out, format!("{:?}", t.shape())));
                }
                Some(t.data())
            }
            None => None,
        };
        let out_shape = vec![geom.batch, geom.c_out, geom.out_h(), geom.out_w()];
        let mut out = vec![T::zero(); out_shape.iter().product()];
        kernels::conv2d_forward(&geom, vx.data(), vw.data(), bias, &mut out);
        let out = Tensor::new(out_shape, out)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Per-channel normalisation over every axis except axis 1.
    ///
    /// Train mode uses batch statistics and folds them into `stats`;
    /// eval mode reads `stats` only.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: Mode,
        eps: T,
        momentum: T,
    ) -> Result<Var> {
        let vx = &self.node(x)?.value;
        let xs = vx.shape().to_vec();
        if xs.len() < 2 {
            return Err(Error::shape("batch_norm", "input rank", ">= 2", xs.len()));
        }
        let c = xs[1];
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let s = self.node(v)?.value.shape();
            if s != [c] {
                return Err(Error::shape("batch_norm", format!("{name} channels"), c, format!("{s:?}")));
            }
        }
        if stats.channels() != c {
            return Err(Error::shape("batch_norm", "running stats channels", c, stats.channels()));
        }
        let plane: usize = xs[2..].iter().product();
        let batch = xs[0];
        let count = batch * plane;
        let xd = vx.data();
        let (g, bt) = (self.nodes[gamma.index()].value.data(), self.nodes[beta.index()].value.data());

        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::DegenerateBatch { count });
                }
                let n = T::of(count as f64);
                let mut buf = Vec::with_capacity(count);
                for ch in 0..c {
                    buf.clear();
                    for b in 0..batch {
                        buf.extend_from_slice(&xd[(b * c + ch) * plane..][..plane]);
                    }
                    let m = T::sum_slice(&buf) / n;
                    buf.iter_mut().for_each(|v| *v = (*v - m) * (*v - m));
                    mean[ch] = m;
                    var[ch] = T::sum_slice(&buf) / n;
                }
            }
            Mode::Eval => {
                mean.copy_from_slice(&stats.mean);
                var.copy_from_slice(&stats.var);
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..batch {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g[ch] * h + bt[ch];
                }
            }
        }
        if mode == Mode::Train {
            stats.update(&mean, &var, count, momentum);
        }
        let out = Tensor::new(xs, out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
            rg,
        ))
    }

    /// Contraction over the last axis of `a` and the second-to-last of `b`.
    /// Leading axes broadcast (extent 1 against any extent).
    pub fn batched_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.node(a)?.value, &self.node(b)?.value);
        let plan = MatmulPlan::new(va.shape(), vb.shape())?;
        let mut out = vec![T::zero(); plan.out_shape.iter().product()];
        let (m, k, n) = (plan.m, plan.k, plan.n);
        for (i, (ao, bo)) in plan.offsets().enumerate() {
            kernels::matmul(
                &va.data()[ao * m * k..][..m * k],
                &vb.data()[bo * k * n..][..k * n],
                &mut out[i * m * n..][..m * n],
                m,
                k,
                n,
            );
        }
        let out = Tensor::new(plan.out_shape, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Matmul { a, b }, rg))
    }

    /// Mean over every axis after the first two: `[B, C, ...] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let vx = &self.node(x)?.value;
        let s = vx.shape();
        if s.len() < 3 {
            return Err(Error::shape("global_avg_pool", "input rank", ">= 3", s.len()));
        }
        let plane: usize = s[2..].iter().product();
        let inv = T::of(plane as f64).recip();
        let data = vx.data().chunks(plane).map(|c| T::sum_slice(c) * inv).collect();
        let out = Tensor::new(vec![s[0], s[1]], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::GlobalAvgPool(x), rg))
    }

    /// `x[B,In] · wᵀ + b` with `w: [Out, In]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (vx, vw) = (&self.node(x)?.value, &self.node(w)?.value);
        let (xs, ws) = (vx.shape(), vw.shape());
        if xs.len() != 2 || ws.len() != 2 {
            return Err(Error::shape("linear", "rank", 2, format!("input {xs:?}, weight {ws:?}")));
        }
        if xs[1] != ws[1] {
            return Err(Error::shape("linear", "input features (axis 1)", ws[1], xs[1]));
        }
        let (rows, fin, fout) = (xs[0], xs[1], ws[0]);
        let bias = match b {
            Some(bv) => {
                let t = &self.node(bv)?.value;
                if t.shape() != [fout] {
                    return Err(Error::shape("linear", "bias extent", fout, format!("{:?}", t.shape())));
                }
                Some(t.data())
            }
            None => None,
        };
        let mut out = vec![T::zero(); rows * fout];
        for r in 0..rows {
            let xr = &vx.data()[r * fin..(r + 1) * fin];
            for o in 0..fout {
                let v = T::dot(xr, &vw.data()[o * fin..(o + 1) * fin]);
                out[r * fout + o] = v + bias.map_or(T::zero(), |bs| bs[o]);
            }
        }
        let out = Tensor::new(vec![rows, fout], out)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    /// Mean cross entropy of `logits: [B, K]` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let vl = &self.node(logits)?.value;
        let s = vl.shape();
        if s.len() != 2 {
            return Err(Error::shape("softmax_cross_entropy", "logits rank", 2, s.len()));
        }
        let (rows, k) = (s[0], s[1]);
        if labels.len() != rows {
            return Err(Error::shape("softmax_cross_entropy", "labels (axis 0)", rows, labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label: bad, classes: k });
        }
        let probs = softmax_rows(vl.data(), k);
        let mut losses = Vec::with_capacity(rows);
        for (r, &l) in labels.iter().enumerate() {
            let row = &vl.data()[r * k..(r + 1) * k];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&z| (z - mx).exp()).sum::<T>().ln();
            losses.push(lse - row[l]);
        }
        let loss = T::sum_slice(&losses) / T::of(rows as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    // ----------------------------------------------------------------
    // Backward

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self.node(loss)?;
        if root.value.numel() != 1 {
            return Err(Error::NonScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.index()] = Some(vec![T::one()]);

        for idx in (0..=loss.index()).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.backprop(node, &gy, &mut grads);
            grads[idx] = Some(gy);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|d| Tensor::new(n.value.shape().to_vec(), d).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients {
            generation: self.generation,
            grads,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], var: Var, contrib: Vec<T>) {
        if !self.nodes[var.index()].requires_grad {
            return;
        }
        match &mut grads[var.index()] {
            Some(g) => g.iter_mut().zip(contrib).for_each(|(a, b)| *a = *a + b),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.index()].requires_grad
    }

    fn val(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.index()].value
    }

    fn backprop(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gy.to_vec());
                self.accumulate(grads, *b, gy.to_vec());
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let g = gy.iter().zip(self.val(*b).data()).map(|(&g, &v)| g * v).collect();
                    self.accumulate(grads, *a, g);
                }
                if self.wants(*b) {
                    let g = gy.iter().zip(self.val(*a).data()).map(|(&g, &v)| g * v).collect();
                    self.accumulate(grads, *b, g);
                }
            }
            Op::Scale(x, s) => {
                self.accumulate(grads, *x, gy.iter().map(|&g| g * *s).collect());
            }
            Op::AddSuffix { x, r } => {
                self.accumulate(grads, *x, gy.to_vec());
                if self.wants(*r) {
                    let n = self.val(*r).numel();
                    let mut g = vec![T::zero(); n];
                    for chunk in gy.chunks(n) {
                        g.iter_mut().zip(chunk).for_each(|(a, &b)| *a = *a + b);
                    }
                    self.accumulate(grads, *r, g);
                }
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, vec![gy[0]; self.val(*x).numel()]);
            }
            Op::LeakyRelu { x, slope } => {
                let g = self
                    .val(*x)
                    .data()
                    .iter()
                    .zip(gy)
                    .map(|(&v, &g)| if v >= T::zero() { g } else { g * *slope })
                    .collect();
                self.accumulate(grads, *x, g);
            }
            Op::Tanh(x) => {
                let g = node
                    .value
                    .data()
                    .iter()
                    .zip(gy)
                    .map(|(&y, &g)| g * (T::one() - y * y))
                    .collect();
                self.accumulate(grads, *x, g);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, gy.to_vec()),
            Op::Permute { x, axes } => {
                let t = Tensor::new(node.value.shape().to_vec(), gy.to_vec()).expect("grad shape");
                let back = t.permute(&inverse_permutation(axes)).expect("inverse permutation");
                self.accumulate(grads, *x, back.into_data());
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut start = 0;
                for &v in inputs {
                    let chunk = self.val(v).shape()[*axis] * inner;
                    if self.wants(v) {
                        let mut g = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            g.extend_from_slice(&gy[o * total + start..o * total + start + chunk]);
                        }
                        self.accumulate(grads, v, g);
                    }
                    start += chunk;
                }
            }
            Op::SegmentSum { x, segments } => {
                let row = gy.len() / node.value.shape()[0];
                let g = segments
                    .iter()
                    .flat_map(|&s| gy[s * row..(s + 1) * row].iter().copied())
                    .collect();
                self.accumulate(grads, *x, g);
            }
            Op::Conv2d { x, w, b, geom } => {
                let mut dx = self.wants(*x).then(|| vec![T::zero(); self.val(*x).numel()]);
                let mut dw = self.wants(*w).then(|| vec![T::zero(); self.val(*w).numel()]);
                let mut db = b.filter(|bv| self.wants(*bv)).map(|_| vec![T::zero(); geom.c_out]);
                kernels::conv2d_backward(
                    geom,
                    self.val(*x).data(),
                    self.val(*w).data(),
                    gy,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(d) = dx {
                    self.accumulate(grads, *x, d);
                }
                if let Some(d) = dw {
                    self.accumulate(grads, *w, d);
                }
                if let (Some(bv), Some(d)) = (b, db) {
                    self.accumulate(grads, *bv, d);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let shape = node.value.shape();
                let (batch, c) = (shape[0], shape[1]);
                let plane: usize = shape[2..].iter().product();
                let count = batch * plane;
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                let mut buf_g = Vec::with_capacity(count);
                let mut buf_gx = Vec::with_capacity(count);
                for ch in 0..c {
                    buf_g.clear();
                    buf_gx.clear();
                    for b in 0..batch {
                        let off = (b * c + ch) * plane;
                        buf_g.extend_from_slice(&gy[off..off + plane]);
                        buf_gx.extend(gy[off..off + plane].iter().zip(&xhat[off..off + plane]).map(|(&g, &h)| g * h));
                    }
                    sum_g[ch] = T::sum_slice(&buf_g);
                    sum_gx[ch] = T::sum_slice(&buf_gx);
                }
                self.accumulate(grads, *gamma, sum_gx.clone());
                self.accumulate(grads, *beta, sum_g.clone());
                if self.wants(*x) {
                    let gm = self.val(*gamma).data();
                    let n = T::of(count as f64);
                    let mut dx = vec![T::zero(); gy.len()];
                    for b in 0..batch {
                        for ch in 0..c {
                            let off = (b * c + ch) * plane;
                            let k = gm[ch] * inv_std[ch];
                            for i in off..off + plane {
                                dx[i] = if *train {
                                    k / n * (n * gy[i] - sum_g[ch] - xhat[i] * sum_gx[ch])
                                } else {
                                    k * gy[i]
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Matmul { a, b } => {
                let (va, vb) = (self.val(*a), self.val(*b));
                let plan = MatmulPlan::new(va.shape(), vb.shape()).expect("validated in forward");
                let (m, k, n) = (plan.m, plan.k, plan.n);
                let mut da = self.wants(*a).then(|| vec![T::zero(); va.numel()]);
                let mut db = self.wants(*b).then(|| vec![T::zero(); vb.numel()]);
                for (i, (ao, bo)) in plan.offsets().enumerate() {
                    kernels::matmul_backward(
                        &va.data()[ao * m * k..][..m * k],
                        &vb.data()[bo * k * n..][..k * n],
                        &gy[i * m * n..][..m * n],
                        da.as_mut().map(|d| &mut d[ao * m * k..][..m * k]),
                        db.as_mut().map(|d| &mut d[bo * k * n..][..k * n]),
                        m,
                        k,
                        n,
                    );
                }
                if let Some(d) = da {
                    self.accumulate(grads, *a, d);
                }
                if let Some(d) = db {
                    self.accumulate(grads, *b, d);
                }
            }
            Op::GlobalAvgPool(x) => {
                let plane = self.val(*x).numel() / gy.len();
                let inv = T::of(plane as f64).recip();
                let g = gy.iter().flat_map(|&g| std::iter::repeat_n(g * inv, plane)).collect();
                self.accumulate(grads, *x, g);
            }
            Op::Linear { x, w, b } => {
                let (vx, vw) = (self.val(*x), self.val(*w));
                let (rows, fin) = (vx.shape()[0], vx.shape()[1]);
                let fout = vw.shape()[0];
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); rows * fin];
                    kernels::matmul(gy, vw.data(), &mut dx, rows, fout, fin);
                    self.accumulate(grads, *x, dx);
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); fout * fin];
                    // dw = gyᵀ · x
                    kernels::matmul_backward(gy, vw.data(), vx.data(), None, Some(&mut dw), rows, fout, fin);
                    self.accumulate(grads, *w, dw);
                }
                if let Some(bv) = b {
                    if self.wants(*bv) {
                        let db = (0..fout)
                            .map(|o| {
                                let col: Vec<T> = (0..rows).map(|r| gy[r * fout + o]).collect();
                                T::sum_slice(&col)
                            })
                            .collect();
                        self.accumulate(grads, *bv, db);
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let k = self.val(*logits).shape()[1];
                let scale = gy[0] / T::of(labels.len() as f64);
                let mut g: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    g[r * k + l] = g[r * k + l] - scale;
                }
                self.accumulate(grads, *logits, g);
            }
        }
    }
}

/// Row-wise softmax of a `[rows, k]` buffer.
pub fn softmax_rows<T: Real>(data: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(k) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = row.iter().map(|&z| (z - mx).exp()).collect();
        let s = T::sum_slice(&e);
        out.extend(e.into_iter().map(|v| v / s));
    }
    out
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        let axis = a
            .shape()
            .iter()
            .zip(b.shape())
            .position(|(x, y)| x != y)
            .map_or_else(|| "rank".to_string(), |i| format!("axis {i}"));
        return Err(Error::shape(op, axis, format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok(())
}

struct MatmulPlan {
    m: usize,
    k: usize,
    n: usize,
    out_shape: Vec<usize>,
    batch_shape: Vec<usize>,
    a_batch: Vec<usize>,
    b_batch: Vec<usize>,
}

impl MatmulPlan {
    fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(Error::shape("batched_matmul", "rank", ">= 2", format!("{a:?} x {b:?}")));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(Error::shape("batched_matmul", "inner dimension", k, k2));
        }
        let (la, lb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
        let rank = la.len().max(lb.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (a_batch, b_batch) = (pad(la), pad(lb));
        let mut batch_shape = Vec::with_capacity(rank);
        for (i, (&x, &y)) in a_batch.iter().zip(&b_batch).enumerate() {
            if x != y && x != 1 && y != 1 {
                return Err(Error::shape("batched_matmul", format!("batch axis {i}"), x, y));
            }
            batch_shape.push(x.max(y));
        }
        let mut out_shape = batch_shape.clone();
        out_shape.extend([m, n]);
        Ok(Self {
            m,
            k,
            n,
            out_shape,
            batch_shape,
            a_batch,
            b_batch,
        })
    }

    /// Batch offsets (in matrices) of `a` and `b` for each output matrix.
    fn offsets(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let total: usize = self.batch_shape.iter().product();
        let out_strides = strides(&self.batch_shape);
        let a_strides = strides(&self.a_batch);
        let b_strides = strides(&self.b_batch);
        (0..total).map(move |flat| {
            let (mut ao, mut bo) = (0, 0);
            for ax in 0..self.batch_shape.len() {
                let i = (flat / out_strides[ax]) % self.batch_shape[ax];
                if self.a_batch[ax] != 1 {
                    ao += i * a_strides[ax];
                }
                if self.b_batch[ax] != 1 {
                    bo += i * b_strides[ax];
                }
            }
            (ao, bo)
        })
    }
}

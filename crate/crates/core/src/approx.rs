//! Small dense networks with hand-written gradients, plus Adam.
//!
//! A model is an optional ReLU hidden layer (the trunk) feeding one or more
//! linear heads. Head kinds:
//! - `Softmax`: a distribution over actions.
//! - `Scalar`: an unconstrained regression output.
//! - `Logit`: an unconstrained output read through a sigmoid by the caller.
//!
//! Parameters are one flat vector laid out as `[W1, b1]` (trunk, when
//! `hidden_dim > 0`) followed by `[W, b]` for each head, weights row-major
//! `(out, in)`. The L2 penalty `λ Σ w²` covers weights only.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dist::{self, ActionDistribution, KL_FLOOR};
use crate::math;
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Softmax,
    Scalar,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Width of the ReLU trunk; 0 makes every head linear in the input.
    pub hidden_dim: usize,
    pub heads: Vec<HeadSpec>,
    pub init_seed: u64,
}

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub weights: usize,
    pub bias: usize,
    pub rows: usize,
    pub cols: usize,
}

impl LayerSlot {
    fn end(&self) -> usize {
        self.bias + self.rows
    }
}

impl ModelSpec {
    pub fn single(input_dim: usize, hidden_dim: usize, output_dim: usize, head: HeadKind, init_seed: u64) -> Self {
        Self { input_dim, hidden_dim, heads: vec![HeadSpec { kind: head, dim: output_dim }], init_seed }
    }

    /// Weak-policy head plus gate head on one trunk.
    pub fn policy_and_gate(input_dim: usize, hidden_dim: usize, n_actions: usize, gate: HeadKind, init_seed: u64) -> Self {
        Self {
            input_dim,
            hidden_dim,
            heads: vec![HeadSpec { kind: HeadKind::Softmax, dim: n_actions }, HeadSpec { kind: gate, dim: 1 }],
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.heads.is_empty() {
            return Err(Error::InvalidArgument("model needs a positive input size and at least one head".into()));
        }
        for h in &self.heads {
            match h.kind {
                HeadKind::Softmax if h.dim < 2 => {
                    return Err(Error::InvalidArgument("softmax head needs at least 2 outputs".into()))
                }
                HeadKind::Scalar | HeadKind::Logit if h.dim != 1 => {
                    return Err(Error::InvalidArgument("scalar and logit heads have exactly 1 output".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn features(&self) -> usize {
        if self.hidden_dim == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    pub fn trunk_slot(&self) -> Option<LayerSlot> {
        (self.hidden_dim > 0).then(|| LayerSlot {
            weights: 0,
            bias: self.hidden_dim * self.input_dim,
            rows: self.hidden_dim,
            cols: self.input_dim,
        })
    }

    pub fn head_slots(&self) -> Vec<LayerSlot> {
        let mut off = self.trunk_slot().map_or(0, |t| t.end());
        let cols = self.features();
        self.heads
            .iter()
            .map(|h| {
                let slot = LayerSlot { weights: off, bias: off + h.dim * cols, rows: h.dim, cols };
                off = slot.end();
                slot
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.head_slots().last().map_or(0, |s| s.end())
    }

    /// Multiply-accumulates for one forward pass: `(trunk, per head)`.
    pub fn mac_counts(&self) -> (usize, Vec<usize>) {
        let trunk = self.hidden_dim * self.input_dim;
        (trunk, self.heads.iter().map(|h| h.dim * self.features()).collect())
    }

    /// Uniform `[-1/√fan_in, 1/√fan_in]` weights, zero biases.
    pub fn init(&self) -> Result<ParameterVector> {
        self.validate()?;
        let mut rng = SplitMix64::new(self.init_seed);
        let mut values = vec![0.0; self.n_params()];
        let mut fill = |slot: LayerSlot| {
            let bound = 1.0 / math::sqrt(slot.cols as f64);
            for w in &mut values[slot.weights..slot.bias] {
                *w = rng.uniform(-bound, bound);
            }
        };
        if let Some(t) = self.trunk_slot() {
            fill(t);
        }
        for s in self.head_slots() {
            fill(s);
        }
        Ok(ParameterVector(values))
    }

    pub fn zeros(&self) -> ParameterVector {
        ParameterVector(vec![0.0; self.n_params()])
    }

    /// True for indices that hold weights (L2 applies), false for biases.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_params()];
        let slots = self.trunk_slot().into_iter().chain(self.head_slots());
        for s in slots {
            for m in &mut mask[s.weights..s.bias] {
                *m = true;
            }
        }
        mask
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        if self.0.len() != spec.n_params() {
            return Err(Error::DimensionMismatch { expected: spec.n_params(), found: self.0.len() });
        }
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(())
    }
}

/// Raw outputs per head: probabilities for softmax heads, the single
/// pre-activation value for scalar and logit heads.
pub type HeadOutputs = Vec<Vec<f64>>;

struct Scratch {
    hidden: Vec<f64>,
    heads: HeadOutputs,
}

impl Scratch {
    fn new(spec: &ModelSpec) -> Self {
        Self { hidden: vec![0.0; spec.hidden_dim], heads: spec.heads.iter().map(|h| vec![0.0; h.dim]).collect() }
    }
}

fn dense(params: &[f64], slot: LayerSlot, input: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &params[slot.weights + r * slot.cols..slot.weights + (r + 1) * slot.cols];
        let mut acc = params[slot.bias + r];
        for (w, x) in row.iter().zip(input) {
            acc += w * x;
        }
        *o = acc;
    }
}

fn forward_into(spec: &ModelSpec, slots: &[LayerSlot], params: &[f64], obs: &[f64], s: &mut Scratch) {
    let features: &[f64] = match spec.trunk_slot() {
        Some(t) => {
            dense(params, t, obs, &mut s.hidden);
            for h in &mut s.hidden {
                *h = h.max(0.0);
            }
            &s.hidden
        }
        None => obs,
    };
    for ((head, slot), out) in spec.heads.iter().zip(slots).zip(s.heads.iter_mut()) {
        dense(params, *slot, features, out);
        if head.kind == HeadKind::Softmax {
            dist::softmax_in_place(out);
        }
    }
}

/// Evaluates every head on one observation.
pub fn forward(spec: &ModelSpec, params: &ParameterVector, observation: &[f64]) -> Result<HeadOutputs> {
    params.check(spec)?;
    if observation.len() != spec.input_dim {
        return Err(Error::DimensionMismatch { expected: spec.input_dim, found: observation.len() });
    }
    let mut s = Scratch::new(spec);
    forward_into(spec, &spec.head_slots(), &params.0, observation, &mut s);
    Ok(s.heads)
}

/// A trained model usable as a policy (its softmax head) or a scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParameterVector,
}

impl Model {
    pub fn new(spec: ModelSpec, params: ParameterVector) -> Result<Self> {
        spec.validate()?;
        params.check(&spec)?;
        Ok(Self { spec, params })
    }

    pub fn initialized(spec: ModelSpec) -> Result<Self> {
        let params = spec.init()?;
        Ok(Self { spec, params })
    }

    /// Outputs of every head; the model was validated at construction, so
    /// only the observation length can be wrong.
    pub fn outputs(&self, observation: &[f64]) -> HeadOutputs {
        let mut s = Scratch::new(&self.spec);
        forward_into(&self.spec, &self.spec.head_slots(), &self.params.0, observation, &mut s);
        s.heads
    }

    pub fn head_index(&self, kind: HeadKind) -> Option<usize> {
        self.spec.heads.iter().position(|h| h.kind == kind)
    }

    /// Distribution from the first softmax head.
    pub fn distribution(&self, observation: &[f64]) -> ActionDistribution {
        let i = self.head_index(HeadKind::Softmax).expect("model has a softmax head");
        ActionDistribution::new(self.outputs(observation).swap_remove(i)).expect("softmax output is a distribution")
    }

    /// Value of the first scalar or logit head.
    pub fn scalar(&self, observation: &[f64]) -> f64 {
        let i = self
            .spec
            .heads
            .iter()
            .position(|h| h.kind != HeadKind::Softmax)
            .expect("model has a scalar or logit head");
        self.outputs(observation)[i][0]
    }
}

/// One training example. `dist_target` is the good policy's distribution,
/// `scalar_target` an entropy (regression) or routing posterior `q`
/// (m-step). `weight` multiplies the example's loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub observation: Vec<f64>,
    pub dist_target: Vec<f64>,
    pub scalar_target: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `(head − target)²` on a scalar head.
    MseScalar { head: usize },
    /// `D(π(x) ‖ target(x))` on a softmax head.
    KlToTarget { head: usize },
    /// `(1 − q) D(π1(x) ‖ π0(x)) + D(q ‖ σ(g̃(x)))`, `q` from `scalar_target`.
    ApiMStep { policy: usize, gate: usize },
}

impl LossKind {
    fn check(&self, spec: &ModelSpec) -> Result<()> {
        let kind = |i: usize| spec.heads.get(i).map(|h| h.kind);
        let ok = match *self {
            LossKind::MseScalar { head } => kind(head) == Some(HeadKind::Scalar),
            LossKind::KlToTarget { head } => kind(head) == Some(HeadKind::Softmax),
            LossKind::ApiMStep { policy, gate } => {
                kind(policy) == Some(HeadKind::Softmax) && kind(gate) == Some(HeadKind::Logit)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("loss {self:?} does not match the model's heads")))
        }
    }
}

/// Clamp applied to `q` before the Bernoulli KL term.
pub const Q_CLAMP: f64 = 1e-6;

fn sample_loss_and_head_grads(kind: LossKind, ex: &Example, heads: &HeadOutputs, dheads: &mut [Vec<f64>]) -> f64 {
    for d in dheads.iter_mut() {
        d.iter_mut().for_each(|v| *v = 0.0);
    }
    let kl_grad = |p: &[f64], t: &[f64], scale: f64, out: &mut [f64]| -> f64 {
        let kl: f64 = p
            .iter()
            .zip(t)
            .map(|(&pi, &ti)| if pi > 0.0 { pi * (math::ln(pi) - math::ln(ti.max(KL_FLOOR))) } else { 0.0 })
            .sum();
        for ((o, &pi), &ti) in out.iter_mut().zip(p).zip(t) {
            let lp = if pi > 0.0 { math::ln(pi) } else { 0.0 };
            *o += scale * pi * (lp - math::ln(ti.max(KL_FLOOR)) - kl);
        }
        kl
    };
    match kind {
        LossKind::MseScalar { head } => {
            let e = heads[head][0] - ex.scalar_target;
            dheads[head][0] = 2.0 * e;
            e * e
        }
        LossKind::KlToTarget { head } => kl_grad(&heads[head], &ex.dist_target, 1.0, &mut dheads[head]),
        LossKind::ApiMStep { policy, gate } => {
            let q = ex.scalar_target.clamp(Q_CLAMP, 1.0 - Q_CLAMP);
            let kl = kl_grad(&heads[policy], &ex.dist_target, 1.0 - q, &mut dheads[policy]);
            let z = heads[gate][0];
            let g = math::sigmoid(z);
            dheads[gate][0] = g - q;
            // D(q ‖ σ(z)) = q ln q + (1-q) ln(1-q) + q softplus(-z) + (1-q) softplus(z)
            let bkl = q * math::ln(q) + (1.0 - q) * math::ln(1.0 - q) + q * math::softplus(-z) + (1.0 - q) * math::softplus(z);
            (1.0 - q) * kl + bkl.max(0.0)
        }
    }
}

/// Weighted mean loss over `batch` plus `l2_lambda Σ w²`, and its exact
/// gradient with respect to every parameter.
pub fn grad(
    spec: &ModelSpec,
    params: &ParameterVector,
    batch: &[Example],
    kind: LossKind,
    l2_lambda: f64,
) -> Result<(ParameterVector, f64)> {
    params.check(spec)?;
    kind.check(spec)?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let total_weight: f64 = batch.iter().map(|e| e.weight).sum();
    if !(total_weight > 0.0) {
        return Err(Error::InvalidArgument("batch weights must sum to a positive value".into()));
    }
    let slots = spec.head_slots();
    let trunk = spec.trunk_slot();
    let p = &params.0;
    let mut g = vec![0.0; p.len()];
    let mut s = Scratch::new(spec);
    let mut dheads: Vec<Vec<f64>> = spec.heads.iter().map(|h| vec![0.0; h.dim]).collect();
    let mut dhidden = vec![0.0; spec.hidden_dim];
    let mut loss = 0.0;
    for ex in batch {
        if ex.observation.len() != spec.input_dim {
            return Err(Error::DimensionMismatch { expected: spec.input_dim, found: ex.observation.len() });
        }
        forward_into(spec, &slots, p, &ex.observation, &mut s);
        let w = ex.weight / total_weight;
        loss += w * sample_loss_and_head_grads(kind, ex, &s.heads, &mut dheads);
        let features: &[f64] = if trunk.is_some() { &s.hidden } else { &ex.observation };
        dhidden.iter_mut().for_each(|v| *v = 0.0);
        for (slot, dh) in slots.iter().zip(&dheads) {
            for (r, &d) in dh.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let d = d * w;
                g[slot.bias + r] += d;
                let row = slot.weights + r * slot.cols;
                for (c, &f) in features.iter().enumerate() {
                    g[row + c] += d * f;
                }
                if trunk.is_some() {
                    for (c, dhc) in dhidden.iter_mut().enumerate() {
                        *dhc += d * p[row + c];
                    }
                }
            }
        }
        if let Some(t) = trunk {
            for (r, &dh) in dhidden.iter().enumerate() {
                if s.hidden[r] <= 0.0 || dh == 0.0 {
                    continue;
                }
                g[t.bias + r] += dh;
                let row = t.weights + r * t.cols;
                for (c, &x) in ex.observation.iter().enumerate() {
                    g[row + c] += dh * x;
                }
            }
        }
    }
    if l2_lambda > 0.0 {
        for (i, m) in spec.weight_mask().into_iter().enumerate() {
            if m {
                loss += l2_lambda * p[i] * p[i];
                g[i] += 2.0 * l2_lambda * p[i];
            }
        }
    }
    Ok((ParameterVector(g), loss))
}

/// Loss only; same definition as [`grad`].
pub fn loss(spec: &ModelSpec, params: &ParameterVector, batch: &[Example], kind: LossKind, l2_lambda: f64) -> Result<f64> {
    grad(spec, params, batch, kind, l2_lambda).map(|(_, l)| l)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.0005, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0, config }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(state: &mut AdamState, params: &mut ParameterVector, gradient: &ParameterVector) -> Result<()> {
    let n = params.len();
    if gradient.len() != n || state.m.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: gradient.len().min(state.m.len()) });
    }
    let c = state.config;
    state.t += 1;
    let bc1 = 1.0 - math::powi(c.beta1, state.t as i32);
    let bc2 = 1.0 - math::powi(c.beta2, state.t as i32);
    for i in 0..n {
        let gi = gradient.0[i];
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * gi;
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * gi * gi;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params.0[i] -= c.lr * m_hat / (math::sqrt(v_hat) + c.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Examples per step; a batch at least as large as the dataset uses
    /// the whole dataset every step.
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub l2_lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { iterations: 10_000, batch_size: 1000, adam: AdamConfig::default(), l2_lambda: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Minimizes `kind` over `data` with Adam, starting from `params`.
/// Reported losses are over the whole dataset.
pub fn train(spec: &ModelSpec, params: &mut ParameterVector, data: &[Example], kind: LossKind, cfg: &TrainConfig) -> Result<TrainReport> {
    let initial_loss = loss(spec, params, data, kind, cfg.l2_lambda)?;
    let mut adam = AdamState::new(params.len(), cfg.adam);
    let mut rng = SplitMix64::new(cfg.seed);
    let mut batch = Vec::new();
    for it in 0..cfg.iterations {
        let (g, l) = if cfg.batch_size >= data.len() {
            grad(spec, params, data, kind, cfg.l2_lambda)?
        } else {
            batch.clear();
            batch.extend((0..cfg.batch_size).map(|_| data[rng.below(data.len())].clone()));
            grad(spec, params, &batch, kind, cfg.l2_lambda)?
        };
        if !l.is_finite() {
            return Err(Error::Diverged { epoch: it, detail: format!("loss {l}") });
        }
        adam_step(&mut adam, params, &g)?;
        if params.0.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch: it, detail: "non-finite parameters".into() });
        }
    }
    let final_loss = loss(spec, params, data, kind, cfg.l2_lambda)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged { epoch: cfg.iterations, detail: format!("loss {final_loss}") });
    }
    Ok(TrainReport { initial_loss, final_loss })
}

/// Merges examples with identical observations and targets by summing
/// their weights. Order follows first occurrence.
pub fn compact(examples: Vec<Example>) -> Vec<Example> {
    let mut out: Vec<Example> = Vec::new();
    for e in examples {
        match out
            .iter_mut()
            .find(|o| o.observation == e.observation && o.dist_target == e.dist_target && o.scalar_target == e.scalar_target)
        {
            Some(o) => o.weight += e.weight,
            None => out.push(e),
        }
    }
    out
}

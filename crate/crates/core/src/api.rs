//! Alternating-minimization imitation.
//!
//! The per-sample routing posterior `q_i` (probability that sample `i` goes
//! to the good policy) and the network parameters are updated in turn. For
//! fixed parameters the optimal `q` has the closed form
//! `q_i = σ(g̃_i + kl_i − β)`, with `β ≥ 0` chosen so that the mean of `q`
//! respects the budget. For fixed `q` a few Adam steps reduce
//! `(1 − q) D(π1 ‖ π0) + D(q ‖ σ(g̃)) + λ‖w‖²`.
//!
//! Convention: `σ(g̃(x))` is the probability of routing `x` to the good
//! policy. At inference the hard gate routes to the good policy iff
//! `g̃(x)` exceeds a cut fitted after training so the deployed routed
//! fraction lands near the budget; with calibration off the cut is 0.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::approx::{self, AdamConfig, AdamState, Example, HeadKind, LossKind, Model, ModelSpec, ParameterVector};
use crate::dist::{self, ActionDistribution, Policy};
use crate::env::{rollout, Actor, Env, Trajectory};
use crate::math;
use crate::oracle::{self, GoodPolicy};
use crate::rng::SplitMix64;
use crate::runtime::Route;
use crate::{Error, Result};

/// Smallest budget the solver accepts; `q_i > 0` makes zero unreachable.
pub const MIN_P_FULL: f64 = 1e-4;
pub const BETA_TOL: f64 = 1e-9;
const POLICY_HEAD: usize = 0;
const GATE_HEAD: usize = 1;
const LOSS: LossKind = LossKind::ApiMStep { policy: POLICY_HEAD, gate: GATE_HEAD };

/// `(1 − q) kl + D(q ‖ σ(g̃)) + β q`.
pub fn per_sample_objective(q: f64, kl: f64, g_tilde: f64, beta: f64) -> f64 {
    (1.0 - q) * kl + dist::bernoulli_kl_unchecked(q, math::sigmoid(g_tilde)) + beta * q
}

/// Minimizer of [`per_sample_objective`] over `q`, one entry per sample.
///
/// Written as `1 / (1 + exp(B − A + β))` with `A = softplus(g̃) + kl` and
/// `B = softplus(−g̃)`; since `A − B = g̃ + kl` this is `σ(g̃ + kl − β)`.
pub fn update_q_closed_form(kl: &[f64], g_tilde: &[f64], beta: f64) -> Vec<f64> {
    kl.iter().zip(g_tilde).map(|(&k, &g)| q_single(k, g, beta)).collect()
}

fn q_single(kl: f64, g_tilde: f64, beta: f64) -> f64 {
    let a = math::softplus(g_tilde) + kl;
    let b = math::softplus(-g_tilde);
    math::sigmoid(a - b - beta)
}

fn weighted_mean_q(kl: &[f64], g: &[f64], w: &[f64], beta: f64) -> f64 {
    let total: f64 = w.iter().sum();
    kl.iter().zip(g).zip(w).map(|((&k, &g), &w)| w * q_single(k, g, beta)).sum::<f64>() / total
}

/// `p_full` as the solver uses it, and whether it had to be raised.
pub fn effective_p_full(p_full: f64) -> (f64, bool) {
    if p_full < MIN_P_FULL {
        (MIN_P_FULL, true)
    } else {
        (p_full, false)
    }
}

/// Smallest `β ≥ 0` with `mean q ≤ p_full` (up to [`BETA_TOL`] on `β`).
pub fn solve_beta(kl: &[f64], g_tilde: &[f64], p_full: f64) -> Result<f64> {
    let w = alloc::vec![1.0; kl.len()];
    solve_beta_weighted(kl, g_tilde, &w, p_full)
}

/// [`solve_beta`] with per-sample weights on the mean.
pub fn solve_beta_weighted(kl: &[f64], g_tilde: &[f64], weights: &[f64], p_full: f64) -> Result<f64> {
    if kl.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if g_tilde.len() != kl.len() {
        return Err(Error::DimensionMismatch { expected: kl.len(), found: g_tilde.len() });
    }
    if weights.len() != kl.len() {
        return Err(Error::DimensionMismatch { expected: kl.len(), found: weights.len() });
    }
    if !(0.0..=1.0).contains(&p_full) {
        return Err(Error::InvalidArgument(format!("p_full {p_full} outside [0, 1]")));
    }
    if kl.iter().chain(g_tilde).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("solve_beta inputs"));
    }
    let (p, _) = effective_p_full(p_full);
    let mean = |b: f64| weighted_mean_q(kl, g_tilde, weights, b);
    if mean(0.0) <= p {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while mean(hi) > p {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::NotConverged { iterations: 0, residual: mean(hi) - p });
        }
    }
    while hi - lo > BETA_TOL {
        let mid = 0.5 * (lo + hi);
        if mean(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Routing posterior for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorBatch {
    pub q: Vec<f64>,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApiConfig {
    pub p_full: f64,
    pub l2_lambda: f64,
    pub epochs: usize,
    /// Demonstration steps collected per epoch.
    pub batch_size: usize,
    /// Adam steps per epoch on the frozen batch.
    pub m_steps: usize,
    /// Shared-trunk width; 0 gives independent linear policy and gate heads.
    pub hidden_dim: usize,
    pub adam: AdamConfig,
    /// Reject an m-step that increases the batch objective.
    pub monotone: bool,
    /// After training, move the hard cut on `g̃` so that at most `p_full`
    /// of a fresh demonstration batch routes to the good policy.
    pub calibrate_gate: bool,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self {
            p_full: 0.3,
            l2_lambda: 0.0,
            epochs: 100,
            batch_size: 1000,
            m_steps: 20,
            hidden_dim: 0,
            adam: AdamConfig::default(),
            monotone: true,
            calibrate_gate: true,
        }
    }
}

impl ApiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_full) {
            return Err(Error::InvalidArgument(format!("p_full {} outside [0, 1]", self.p_full)));
        }
        if !(self.l2_lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("l2_lambda {} must be >= 0", self.l2_lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.m_steps == 0 {
            return Err(Error::InvalidArgument("m_steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub mean_q: f64,
    pub beta: f64,
}

/// Weak policy and gate sharing one network: head 0 is the policy
/// softmax, head 1 the gate logit `g̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiBundle {
    pub model: Model,
    /// Hard cut: good iff `g̃(x) > gate_offset`. Zero is the plain `σ(g̃) > 0.5` rule.
    pub gate_offset: f64,
    pub p_full_target: f64,
    pub history: Vec<EpochRecord>,
    pub warnings: Vec<String>,
}

impl ApiBundle {
    pub fn gate_logit(&self, observation: &[f64]) -> f64 {
        self.model.scalar(observation)
    }

    /// `σ(g̃(x))`, the probability of routing to the good policy.
    pub fn gate_probability(&self, observation: &[f64]) -> f64 {
        math::sigmoid(self.gate_logit(observation))
    }

    pub fn route(&self, observation: &[f64]) -> Route {
        gate_route(self.gate_logit(observation) - self.gate_offset)
    }

    pub fn weak_distribution(&self, observation: &[f64]) -> ActionDistribution {
        self.model.distribution(observation)
    }
}

/// Hard gate: good iff `σ(g̃) > 0.5`, i.e. `g̃ > 0`.
pub fn gate_route(g_tilde: f64) -> Route {
    if g_tilde > 0.0 {
        Route::Good
    } else {
        Route::Weak
    }
}

pub fn model_spec(env: &Env, hidden_dim: usize, init_seed: u64) -> ModelSpec {
    ModelSpec::policy_and_gate(env.spec().obs_dim, hidden_dim, env.n_actions(), HeadKind::Logit, init_seed)
}

/// Per-example `D(π1(x) ‖ π0(x))` and `g̃(x)` under `model`.
pub fn kl_and_logits(model: &Model, batch: &[Example]) -> (Vec<f64>, Vec<f64>) {
    let mut kl = Vec::with_capacity(batch.len());
    let mut g = Vec::with_capacity(batch.len());
    for ex in batch {
        let out = model.outputs(&ex.observation);
        kl.push(dist::kl_unchecked(&out[POLICY_HEAD], &ex.dist_target));
        g.push(out[GATE_HEAD][0]);
    }
    (kl, g)
}

/// Closed-form q-step on `batch`; writes `q` into each example's scalar target.
pub fn q_step(model: &Model, batch: &mut [Example], p_full: f64) -> Result<PosteriorBatch> {
    let (kl, g) = kl_and_logits(model, batch);
    let w: Vec<f64> = batch.iter().map(|e| e.weight).collect();
    let beta = solve_beta_weighted(&kl, &g, &w, p_full)?;
    let q = update_q_closed_form(&kl, &g, beta);
    for (e, &qi) in batch.iter_mut().zip(&q) {
        e.scalar_target = qi;
    }
    Ok(PosteriorBatch { q, beta })
}

/// Batch objective with `q` taken from the examples' scalar targets.
pub fn objective(model: &Model, batch: &[Example], l2_lambda: f64) -> Result<f64> {
    approx::loss(&model.spec, &model.params, batch, LOSS, l2_lambda)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStepReport {
    pub before: f64,
    pub after: f64,
    pub rejected: bool,
}

/// `steps` Adam steps on the weighted objective with `q` held fixed.
pub fn m_step(
    model: &mut Model,
    batch: &[Example],
    l2_lambda: f64,
    adam: &mut AdamState,
    steps: usize,
    monotone: bool,
) -> Result<MStepReport> {
    let before = objective(model, batch, l2_lambda)?;
    let saved = if monotone { Some((model.params.clone(), adam.clone())) } else { None };
    for _ in 0..steps {
        let (g, _) = approx::grad(&model.spec, &model.params, batch, LOSS, l2_lambda)?;
        approx::adam_step(adam, &mut model.params, &g)?;
        if model.params.0.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch: 0, detail: "non-finite parameters".into() });
        }
    }
    let after = objective(model, batch, l2_lambda)?;
    if !after.is_finite() {
        return Err(Error::Diverged { epoch: 0, detail: format!("m-step objective {after}") });
    }
    if let Some((params, state)) = saved {
        if after > before {
            model.params = params;
            *adam = state;
            return Ok(MStepReport { before, after: before, rejected: true });
        }
    }
    Ok(MStepReport { before, after, rejected: false })
}

/// Demonstration steps as examples with unit weight, duplicates merged.
pub fn batch_from(trajectories: &[Trajectory]) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for t in trajectories {
        for s in &t.steps {
            let good = s.good.as_ref().ok_or_else(|| Error::InvalidArgument("step lacks the good distribution".into()))?;
            out.push(Example { observation: s.observation.clone(), dist_target: good.probs().to_vec(), scalar_target: 0.0, weight: 1.0 });
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok(approx::compact(out))
}

/// Runs the alternation: each epoch collects a fresh demonstration batch
/// from stream `epoch` of `seed`, solves for `q`, then takes the m-step.
pub fn run_api(env: &Env, good: &GoodPolicy, config: &ApiConfig, seed: u64) -> Result<ApiBundle> {
    config.validate()?;
    let mut warnings = Vec::new();
    if effective_p_full(config.p_full).1 {
        warnings.push(format!("p_full {} raised to {MIN_P_FULL}", config.p_full));
    }
    let spec = model_spec(env, config.hidden_dim, seed);
    let mut model = Model::initialized(spec)?;
    let mut adam = AdamState::new(model.params.len(), config.adam);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let demo_seed = SplitMix64::stream(seed, epoch as u64).next_u64();
        let demos = oracle::demonstrations(env, good, config.batch_size, demo_seed)?;
        let mut batch = batch_from(&demos)?;
        let post = q_step(&model, &mut batch, config.p_full)?;
        let total: f64 = batch.iter().map(|e| e.weight).sum();
        let mean_q = batch.iter().zip(&post.q).map(|(e, q)| e.weight * q).sum::<f64>() / total;
        let r = m_step(&mut model, &batch, config.l2_lambda, &mut adam, config.m_steps, config.monotone)
            .map_err(|e| match e {
                Error::Diverged { detail, .. } => Error::Diverged { epoch, detail },
                other => other,
            })?;
        if !r.after.is_finite() {
            return Err(Error::Diverged { epoch, detail: format!("loss {}", r.after) });
        }
        history.push(EpochRecord { epoch, loss: r.after, mean_q, beta: post.beta });
    }
    let mut gate_offset = 0.0;
    if config.calibrate_gate && config.epochs > 0 {
        let demo_seed = SplitMix64::stream(seed, config.epochs as u64).next_u64();
        let demos = oracle::demonstrations(env, good, config.batch_size, demo_seed)?;
        let start = calibrate_gate_offset(&model, &demos, config.p_full)?;
        let probe_seed = SplitMix64::stream(seed, config.epochs as u64 + 1).next_u64();
        gate_offset = refine_gate_offset(env, good, &model, start, config.p_full, probe_seed)?;
    }
    Ok(ApiBundle { model, gate_offset, p_full_target: config.p_full, history, warnings })
}

/// Episodes per refinement round and the number of rounds.
pub const GATE_PROBE_EPISODES: usize = 100;
pub const GATE_PROBE_ROUNDS: usize = 8;

/// Cut on `values` whose routed fraction (values above the cut) is closest
/// to `p_full`; ties go to the smaller fraction. Repeated values make the
/// achievable fractions coarse, so the cut may overshoot.
pub fn nearest_fraction_cut(values: &[f64], p_full: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no values to cut".into()));
    }
    let mut g = values.to_vec();
    g.sort_by(|a, b| b.total_cmp(a));
    let n = g.len() as f64;
    // Routing nothing: cut at the largest value.
    let mut best = (p_full, g[0]);
    let mut i = 0;
    while i < g.len() {
        let mut j = i;
        while j < g.len() && g[j] == g[i] {
            j += 1;
        }
        // Cut just below g[i]: the first j values route to good.
        let gap = (j as f64 / n - p_full).abs();
        if gap < best.0 {
            best = (gap, math::next_down(g[i]));
        }
        i = j;
    }
    Ok(best.1)
}

/// [`nearest_fraction_cut`] over the gate logits of demonstration steps.
pub fn calibrate_gate_offset(model: &Model, demos: &[Trajectory], p_full: f64) -> Result<f64> {
    let g: Vec<f64> = demos.iter().flat_map(|t| &t.steps).map(|s| model.scalar(&s.observation)).collect();
    if g.is_empty() {
        return Err(Error::InvalidArgument("no demonstration steps".into()));
    }
    nearest_fraction_cut(&g, p_full)
}

/// The trained pair deployed with a fixed cut, recording every gate logit.
struct Deployed<'a> {
    model: &'a Model,
    good: &'a GoodPolicy,
    offset: f64,
    logits: Vec<f64>,
}

impl Actor for Deployed<'_> {
    fn n_actions(&self) -> usize {
        self.good.n_actions()
    }

    fn act(&mut self, state: usize, observation: &[f64], rng: &mut SplitMix64) -> Result<usize> {
        let out = self.model.outputs(observation);
        let g = out[GATE_HEAD][0];
        self.logits.push(g);
        let action = if gate_route(g - self.offset) == Route::Good {
            rng.categorical(self.good.distribution(state, observation).probs())
        } else {
            rng.categorical(&out[POLICY_HEAD])
        };
        Ok(action)
    }
}

/// Gate logits visited and the fraction routed good when the pair is
/// deployed with cut `offset` on `GATE_PROBE_EPISODES` probe seeds.
fn probe_cut(env: &Env, good: &GoodPolicy, model: &Model, offset: f64, probe_seed: u64) -> Result<(Vec<f64>, f64)> {
    let mut a = Deployed { model, good, offset, logits: Vec::new() };
    for i in 0..GATE_PROBE_EPISODES as u64 {
        rollout(env, &mut a, probe_seed.wrapping_add(i), None)?;
    }
    let routed = a.logits.iter().filter(|&&g| gate_route(g - offset) == Route::Good).count();
    let f = routed as f64 / a.logits.len().max(1) as f64;
    Ok((a.logits, f))
}

/// Demonstration states come from the good policy, but the deployed pair
/// visits its own states. Starting from `start`, alternately roll out the
/// pair on probe seeds and re-cut on the logits it visited; keep the cut
/// whose own rollouts came closest to `p_full`.
pub fn refine_gate_offset(env: &Env, good: &GoodPolicy, model: &Model, start: f64, p_full: f64, probe_seed: u64) -> Result<f64> {
    let mut offset = start;
    let mut best = (f64::INFINITY, start);
    for _ in 0..GATE_PROBE_ROUNDS {
        let (logits, f) = probe_cut(env, good, model, offset, probe_seed)?;
        if (f - p_full).abs() < best.0 {
            best = ((f - p_full).abs(), offset);
        }
        let next = nearest_fraction_cut(&logits, p_full)?;
        if next == offset {
            break;
        }
        offset = next;
    }
    Ok(best.1)
}

/// Parameters of an untrained bundle, for comparison with `epochs = 0`.
pub fn initial_params(env: &Env, config: &ApiConfig, seed: u64) -> Result<ParameterVector> {
    model_spec(env, config.hidden_dim, seed).init()
}

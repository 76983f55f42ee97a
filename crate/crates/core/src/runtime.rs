//! The deployable composite policy, baselines, cost accounting, and the
//! evaluation harness.
//!
//! Costs are abstract multiply-accumulate units (millions). A decision
//! routed to the weak policy costs `c_gate + c_weak_head`; one routed to
//! the good policy costs `c_gate + c_full`, since the gate ran first.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::api::{self, ApiBundle, ApiConfig};
use crate::approx::{HeadKind, Model, ModelSpec, TrainConfig};
use crate::dist::{ActionDistribution, CostTag, Policy};
use crate::env::{rollout, Actor, Env, EpisodeScore, Trajectory, STREAM_GATE};
use crate::epi::{self, CalibrationSample, Epi2Search, EpiBundle, EpiRule, ProbeResult};
use crate::math;
use crate::oracle::GoodPolicy;
use crate::rng::SplitMix64;
use crate::{Error, Result};

pub const DEFAULT_EPISODES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Route {
    Good,
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub c_gate: f64,
    pub c_weak_head: f64,
    pub c_full: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { c_gate: 18.0, c_weak_head: 2.0, c_full: 132.0 }
    }
}

impl CostModel {
    pub fn new(c_gate: f64, c_weak_head: f64, c_full: f64) -> Result<Self> {
        let c = Self { c_gate, c_weak_head, c_full };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c_gate", self.c_gate), ("c_weak_head", self.c_weak_head), ("c_full", self.c_full)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} = {v} must be positive and finite")));
            }
        }
        Ok(())
    }

    /// False when the weak path is not cheaper than the good policy alone.
    pub fn gating_pays_off(&self) -> bool {
        self.c_full > self.c_gate + self.c_weak_head
    }

    /// Costs from multiply-accumulate counts of the actual networks, in
    /// millions: trunk and gate head, weak head, and the good policy.
    pub fn from_model(spec: &ModelSpec, gate_head: usize, policy_head: usize, c_full: f64) -> Result<Self> {
        let (trunk, heads) = spec.mac_counts();
        let get = |i: usize| heads.get(i).copied().ok_or(Error::IndexOutOfRange { what: "head", index: i, bound: heads.len() });
        let m = 1e-6;
        Self::new((trunk + get(gate_head)?) as f64 * m, get(policy_head)? as f64 * m, c_full)
    }

    pub fn path_cost(&self, route: Route) -> f64 {
        match route {
            Route::Good => self.c_gate + self.c_full,
            Route::Weak => self.c_gate + self.c_weak_head,
        }
    }

    /// Cost of a policy running alone, without a gate.
    pub fn plain_cost(&self, tag: CostTag) -> f64 {
        match tag {
            CostTag::Full => self.c_full,
            CostTag::Weak => self.c_gate + self.c_weak_head,
        }
    }

    /// Mean cost per decision when a fraction `f` goes to the good policy.
    pub fn avg_cost(&self, f: f64) -> f64 {
        self.c_gate + self.c_weak_head * (1.0 - f) + self.c_full * f
    }

    pub fn speedup(&self, f: f64) -> f64 {
        self.c_full / self.avg_cost(f)
    }
}

/// A trained network used as a plain policy.
#[derive(Debug, Clone, Copy)]
pub struct ModelPolicy<'a>(pub &'a Model);

impl Policy for ModelPolicy<'_> {
    fn n_actions(&self) -> usize {
        self.0.spec.heads.iter().find(|h| h.kind == HeadKind::Softmax).map_or(0, |h| h.dim)
    }

    fn distribution(&self, _state: usize, observation: &[f64]) -> ActionDistribution {
        self.0.distribution(observation)
    }

    fn cost_tag(&self) -> CostTag {
        CostTag::Weak
    }
}

/// The weak policy and gate of the API bundle, used alone.
#[derive(Debug, Clone, Copy)]
pub struct ApiWeak<'a>(pub &'a ApiBundle);

impl Policy for ApiWeak<'_> {
    fn n_actions(&self) -> usize {
        ModelPolicy(&self.0.model).n_actions()
    }

    fn distribution(&self, _state: usize, observation: &[f64]) -> ActionDistribution {
        self.0.weak_distribution(observation)
    }

    fn cost_tag(&self) -> CostTag {
        CostTag::Weak
    }
}

/// Good iff `S(π1(x)) > threshold`.
pub fn naive_switch_rule(pi1: &ActionDistribution, threshold: f64) -> Route {
    if pi1.entropy().nats() > threshold {
        Route::Good
    } else {
        Route::Weak
    }
}

/// Threshold such that at most `⌊p_full·n⌋` samples have `S(π1) > threshold`.
pub fn calibrate_naive(samples: &[CalibrationSample], p_full: f64) -> Result<f64> {
    let h: Vec<f64> = samples.iter().map(|s| s.pi1_entropy).collect();
    epi::upper_threshold(&h, p_full)
}

/// Independent Bernoulli(`p_full`) per decision.
pub fn random_switch_rule(p_full: f64, rng: &mut SplitMix64) -> Route {
    if rng.bernoulli(p_full) {
        Route::Good
    } else {
        Route::Weak
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Router {
    Epi(EpiBundle),
    Api(ApiBundle),
    /// The gate stream is reseeded from the episode seed, so actions and
    /// environment draws match the plain policies seed for seed.
    Random { p_full: f64, weak: Model, rng: SplitMix64 },
    Naive { threshold: f64, weak: Model },
}

impl Router {
    pub fn random(p_full: f64, weak: Model) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_full) {
            return Err(Error::InvalidArgument(format!("p_full {p_full} outside [0, 1]")));
        }
        Ok(Router::Random { p_full, weak, rng: SplitMix64::new(0) })
    }

    fn weak_distribution(&self, observation: &[f64]) -> ActionDistribution {
        match self {
            Router::Epi(b) => b.pi1.distribution(observation),
            Router::Api(b) => b.weak_distribution(observation),
            Router::Random { weak, .. } | Router::Naive { weak, .. } => weak.distribution(observation),
        }
    }

    fn n_actions(&self) -> usize {
        match self {
            Router::Epi(b) => ModelPolicy(&b.pi1).n_actions(),
            Router::Api(b) => ApiWeak(b).n_actions(),
            Router::Random { weak, .. } | Router::Naive { weak, .. } => ModelPolicy(weak).n_actions(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub state: usize,
    pub route: Route,
    pub cost: f64,
}

/// Gate, weak policy, and good policy deployed together.
#[derive(Debug, Clone)]
pub struct CompositePolicy<'a> {
    pub good: &'a GoodPolicy,
    pub router: Router,
    pub cost_model: CostModel,
    pub log: Vec<Decision>,
}

impl<'a> CompositePolicy<'a> {
    pub fn new(good: &'a GoodPolicy, router: Router, cost_model: CostModel) -> Result<Self> {
        cost_model.validate()?;
        if router.n_actions() != good.n_actions() {
            return Err(Error::DimensionMismatch { expected: good.n_actions(), found: router.n_actions() });
        }
        Ok(Self { good, router, cost_model, log: Vec::new() })
    }

    pub fn route(&mut self, observation: &[f64]) -> Route {
        match &mut self.router {
            Router::Epi(b) => b.route(observation),
            Router::Api(b) => b.route(observation),
            Router::Random { p_full, rng, .. } => random_switch_rule(*p_full, rng),
            Router::Naive { threshold, weak } => naive_switch_rule(&weak.distribution(observation), *threshold),
        }
    }

    pub fn good_decisions(&self) -> usize {
        self.log.iter().filter(|d| d.route == Route::Good).count()
    }

    pub fn realized_fraction(&self) -> f64 {
        if self.log.is_empty() {
            0.0
        } else {
            self.good_decisions() as f64 / self.log.len() as f64
        }
    }

    /// Mean of the per-decision costs in the log.
    pub fn logged_avg_cost(&self) -> f64 {
        if self.log.is_empty() {
            return 0.0;
        }
        self.log.iter().map(|d| d.cost).sum::<f64>() / self.log.len() as f64
    }
}

impl Actor for CompositePolicy<'_> {
    fn n_actions(&self) -> usize {
        self.good.n_actions()
    }

    fn begin_episode(&mut self, seed: u64) {
        if let Router::Random { rng, .. } = &mut self.router {
            *rng = SplitMix64::stream(seed, STREAM_GATE);
        }
    }

    fn act(&mut self, state: usize, observation: &[f64], rng: &mut SplitMix64) -> Result<usize> {
        let route = self.route(observation);
        let d = match route {
            Route::Good => self.good.distribution(state, observation),
            Route::Weak => self.router.weak_distribution(observation),
        };
        self.log.push(Decision { state, route, cost: self.cost_model.path_cost(route) });
        Ok(rng.categorical(d.probs()))
    }
}

/// One evaluated episode with its routing counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOutcome {
    pub score: EpisodeScore,
    pub good_decisions: usize,
    pub decisions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub method: String,
    pub env: String,
    pub p_full_target: f64,
    pub l2_lambda: f64,
    pub realized_fraction_good: f64,
    pub mean_score: f64,
    pub score_stddev: f64,
    pub n_episodes: usize,
    pub avg_cost: f64,
    pub speedup: f64,
    pub seed_base: u64,
}

/// Labels attached to a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportMeta {
    pub method: String,
    pub env: String,
    pub p_full_target: f64,
    pub l2_lambda: f64,
    pub seed_base: u64,
}

/// Runs the composite for one episode with a fresh log.
pub fn composite_episode(env: &Env, composite: &mut CompositePolicy<'_>, seed: u64) -> Result<(Trajectory, EpisodeOutcome)> {
    composite.log.clear();
    let (traj, score) = rollout(env, composite, seed, None)?;
    let outcome = EpisodeOutcome { score, good_decisions: composite.good_decisions(), decisions: composite.log.len() };
    Ok((traj, outcome))
}

/// Aggregates composite episodes. The realized fraction is pooled over all
/// decisions; cost and speedup follow from it.
pub fn summarize_composite(meta: ReportMeta, outcomes: &[EpisodeOutcome], cost: &CostModel) -> Result<EvaluationReport> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument("no episodes".into()));
    }
    let good: usize = outcomes.iter().map(|o| o.good_decisions).sum();
    let total: usize = outcomes.iter().map(|o| o.decisions).sum();
    let f = if total == 0 { 0.0 } else { good as f64 / total as f64 };
    Ok(summarize(meta, outcomes, f, cost.avg_cost(f), cost.c_full))
}

fn summarize(meta: ReportMeta, outcomes: &[EpisodeOutcome], f: f64, avg_cost: f64, c_full: f64) -> EvaluationReport {
    let scores: Vec<f64> = outcomes.iter().map(|o| o.score.undiscounted_return).collect();
    EvaluationReport {
        method: meta.method,
        env: meta.env,
        p_full_target: meta.p_full_target,
        l2_lambda: meta.l2_lambda,
        realized_fraction_good: f,
        mean_score: math::mean(&scores),
        score_stddev: if scores.len() > 1 { math::stddev(&scores) } else { 0.0 },
        n_episodes: outcomes.len(),
        avg_cost,
        speedup: c_full / avg_cost,
        seed_base: meta.seed_base,
    }
}

/// Evaluates the composite on seeds `seed_base..seed_base + n_episodes`.
pub fn evaluate_composite(
    env: &Env,
    composite: &mut CompositePolicy<'_>,
    n_episodes: usize,
    meta: ReportMeta,
) -> Result<(EvaluationReport, Vec<EpisodeOutcome>)> {
    let outcomes = (0..n_episodes as u64)
        .map(|i| composite_episode(env, composite, meta.seed_base.wrapping_add(i)).map(|(_, o)| o))
        .collect::<Result<Vec<_>>>()?;
    let cost = composite.cost_model;
    Ok((summarize_composite(meta, &outcomes, &cost)?, outcomes))
}

pub fn plain_episode<P: Policy>(env: &Env, policy: &P, seed: u64) -> Result<EpisodeOutcome> {
    let (_, score) = rollout(env, &mut crate::env::Sampled(policy), seed, None)?;
    let good = if policy.cost_tag() == CostTag::Full { score.length } else { 0 };
    Ok(EpisodeOutcome { score, good_decisions: good, decisions: score.length })
}

pub fn summarize_plain(meta: ReportMeta, outcomes: &[EpisodeOutcome], tag: CostTag, cost: &CostModel) -> Result<EvaluationReport> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument("no episodes".into()));
    }
    let f = if tag == CostTag::Full { 1.0 } else { 0.0 };
    Ok(summarize(meta, outcomes, f, cost.plain_cost(tag), cost.c_full))
}

/// Evaluates a policy running alone, with no gate cost.
pub fn evaluate_plain<P: Policy>(
    env: &Env,
    policy: &P,
    n_episodes: usize,
    cost: &CostModel,
    meta: ReportMeta,
) -> Result<(EvaluationReport, Vec<EpisodeOutcome>)> {
    let outcomes = (0..n_episodes as u64)
        .map(|i| plain_episode(env, policy, meta.seed_base.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize_plain(meta, &outcomes, policy.cost_tag(), cost)?, outcomes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Epi1,
    Epi2,
    Api,
    Random,
    Naive,
    Good,
    Weak,
}

impl Method {
    pub const GATED: [Method; 5] = [Method::Epi1, Method::Epi2, Method::Api, Method::Random, Method::Naive];

    pub fn name(self) -> &'static str {
        match self {
            Method::Epi1 => "epi1",
            Method::Epi2 => "epi2",
            Method::Api => "api",
            Method::Random => "random",
            Method::Naive => "naive",
            Method::Good => "good",
            Method::Weak => "weak",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [Method::Epi1, Method::Epi2, Method::Api, Method::Random, Method::Naive, Method::Good, Method::Weak]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }

    pub fn uses_l2(self) -> bool {
        !matches!(self, Method::Good)
    }
}

/// Everything a sweep needs besides the environment and good policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub methods: Vec<Method>,
    pub p_full: Vec<f64>,
    pub l2: Vec<f64>,
    pub n_episodes: usize,
    pub seed_base: u64,
    /// Demonstration steps for the entropy-based models and calibration.
    pub demo_steps: usize,
    pub weak_hidden: usize,
    pub gate_hidden: usize,
    pub train: TrainConfig,
    pub api: ApiConfig,
    pub epi2: Epi2Search,
    pub probe_episodes: usize,
    pub cost: CostModel,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            methods: Method::GATED.to_vec(),
            p_full: alloc::vec![0.1, 0.3, 0.5],
            l2: alloc::vec![0.0, 1e-5, 1e-3],
            n_episodes: DEFAULT_EPISODES,
            seed_base: 1000,
            demo_steps: 2000,
            weak_hidden: 0,
            gate_hidden: 16,
            train: TrainConfig::default(),
            api: ApiConfig::default(),
            epi2: Epi2Search::default(),
            probe_episodes: epi::DEFAULT_PROBE_EPISODES,
            cost: CostModel::default(),
        }
    }
}

impl SweepSettings {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.p_full.is_empty() || self.l2.is_empty() {
            return Err(Error::InvalidArgument("sweep grids must be nonempty".into()));
        }
        if self.n_episodes == 0 || self.probe_episodes == 0 {
            return Err(Error::InvalidArgument("episode counts must be >= 1".into()));
        }
        if self.demo_steps == 0 {
            return Err(Error::InvalidArgument("demo_steps must be >= 1".into()));
        }
        for &p in &self.p_full {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("p_full {p} outside [0, 1]")));
            }
        }
        for &l in &self.l2 {
            if !(l >= 0.0) {
                return Err(Error::InvalidArgument(format!("l2 {l} must be >= 0")));
            }
        }
        self.cost.validate()
    }

    /// Seeds for probe rollouts, disjoint from evaluation seeds.
    pub fn probe_seed_base(&self) -> u64 {
        SplitMix64::stream(self.seed_base, 7).next_u64()
    }

    pub fn demo_seed(&self) -> u64 {
        SplitMix64::stream(self.seed_base, 8).next_u64()
    }

    fn model_seed(&self, l2: f64) -> u64 {
        SplitMix64::stream(self.seed_base ^ l2.to_bits(), 9).next_u64()
    }
}

/// Entropy regressor, imitation policy, and calibration samples for one
/// regularization strength.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakModels {
    pub l2: f64,
    pub g_tilde: Model,
    pub pi1: Model,
    pub samples: Vec<CalibrationSample>,
}

pub fn train_weak_models(env: &Env, demos: &[Trajectory], settings: &SweepSettings, l2: f64) -> Result<WeakModels> {
    let seed = settings.model_seed(l2);
    let cfg = TrainConfig { l2_lambda: l2, seed, ..settings.train };
    let obs = env.spec().obs_dim;
    let g_spec = ModelSpec::single(obs, settings.gate_hidden, 1, HeadKind::Scalar, seed);
    let p_spec = ModelSpec::single(obs, settings.weak_hidden, env.n_actions(), HeadKind::Softmax, seed ^ 1);
    let (g_tilde, _) = epi::fit_entropy_regressor(demos, g_spec, &cfg)?;
    let (pi1, _) = epi::fit_imitation_policy(demos, p_spec, &cfg)?;
    let samples = epi::calibration_samples(&g_tilde, &pi1, demos);
    Ok(WeakModels { l2, g_tilde, pi1, samples })
}

/// One sweep cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub method: Method,
    pub p_full: f64,
    pub l2: f64,
}

/// Jobs in report order: the good policy once, then for each
/// regularization strength the weak policy followed by every gated
/// method at every budget.
pub fn jobs(settings: &SweepSettings) -> Vec<Job> {
    let mut out = alloc::vec![Job { method: Method::Good, p_full: 1.0, l2: 0.0 }];
    for &l2 in &settings.l2 {
        out.push(Job { method: Method::Weak, p_full: 0.0, l2 });
        for &method in &settings.methods {
            if matches!(method, Method::Good | Method::Weak) {
                continue;
            }
            for &p_full in &settings.p_full {
                out.push(Job { method, p_full, l2 });
            }
        }
    }
    out
}

/// The router a job deploys. EPI-2 thresholds are searched by probing
/// composite rollouts on seeds disjoint from evaluation.
pub fn build_router(env: &Env, good: &GoodPolicy, weak: &WeakModels, settings: &SweepSettings, job: &Job) -> Result<Router> {
    Ok(match job.method {
        Method::Epi1 => {
            let t1 = epi::calibrate_epi1(&weak.samples, job.p_full)?;
            Router::Epi(EpiBundle { g_tilde: weak.g_tilde.clone(), pi1: weak.pi1.clone(), rule: EpiRule::Epi1 { t1 }, p_full_target: job.p_full })
        }
        Method::Epi2 => {
            let cal = calibrate_epi2_by_probe(env, good, weak, settings, job.p_full)?;
            let rule = EpiRule::Epi2 { t1: cal.t1, t2: cal.t2, variant: settings.epi2.variant };
            Router::Epi(EpiBundle { g_tilde: weak.g_tilde.clone(), pi1: weak.pi1.clone(), rule, p_full_target: job.p_full })
        }
        Method::Api => {
            let cfg = ApiConfig { p_full: job.p_full, l2_lambda: job.l2, ..settings.api };
            let seed = settings.model_seed(job.l2) ^ job.p_full.to_bits();
            Router::Api(api::run_api(env, good, &cfg, seed)?)
        }
        Method::Random => Router::random(job.p_full, weak.pi1.clone())?,
        Method::Naive => Router::Naive { threshold: calibrate_naive(&weak.samples, job.p_full)?, weak: weak.pi1.clone() },
        Method::Good | Method::Weak => return Err(Error::InvalidArgument(format!("{} is not a gated method", job.method.name()))),
    })
}

pub fn calibrate_epi2_by_probe(
    env: &Env,
    good: &GoodPolicy,
    weak: &WeakModels,
    settings: &SweepSettings,
    p_full: f64,
) -> Result<epi::Epi2Calibration> {
    let base = settings.probe_seed_base();
    epi::calibrate_epi2(&weak.samples, p_full, &settings.epi2, |rule| {
        let bundle = EpiBundle { g_tilde: weak.g_tilde.clone(), pi1: weak.pi1.clone(), rule: *rule, p_full_target: p_full };
        let mut c = CompositePolicy::new(good, Router::Epi(bundle), settings.cost)?;
        let meta = ReportMeta { method: String::new(), env: String::new(), p_full_target: p_full, l2_lambda: weak.l2, seed_base: base };
        let (r, _) = evaluate_composite(env, &mut c, settings.probe_episodes, meta)?;
        Ok(ProbeResult { mean_return: r.mean_score, routed_fraction: r.realized_fraction_good })
    })
}

fn meta(env: &Env, settings: &SweepSettings, job: &Job) -> ReportMeta {
    ReportMeta {
        method: job.method.name().to_string(),
        env: env.spec().name.clone(),
        p_full_target: job.p_full,
        l2_lambda: job.l2,
        seed_base: settings.seed_base,
    }
}

/// Trains (where needed) and evaluates one job.
pub fn run_job(env: &Env, good: &GoodPolicy, weak: &WeakModels, settings: &SweepSettings, job: &Job) -> Result<EvaluationReport> {
    let m = meta(env, settings, job);
    match job.method {
        Method::Good => evaluate_plain(env, good, settings.n_episodes, &settings.cost, m).map(|r| r.0),
        Method::Weak => evaluate_plain(env, &ModelPolicy(&weak.pi1), settings.n_episodes, &settings.cost, m).map(|r| r.0),
        _ => {
            let router = build_router(env, good, weak, settings, job)?;
            let mut c = CompositePolicy::new(good, router, settings.cost)?;
            evaluate_composite(env, &mut c, settings.n_episodes, m).map(|r| r.0)
        }
    }
}

/// A sweep cell's outcome; failures are kept per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub job: Job,
    pub result: core::result::Result<EvaluationReport, String>,
}

/// Sequential sweep over [`jobs`].
pub fn sweep(env: &Env, good: &GoodPolicy, settings: &SweepSettings) -> Result<Vec<SweepRow>> {
    settings.validate()?;
    let demos = crate::oracle::demonstrations(env, good, settings.demo_steps, settings.demo_seed())?;
    let mut weak = Vec::with_capacity(settings.l2.len());
    for &l2 in &settings.l2 {
        weak.push(train_weak_models(env, &demos, settings, l2));
    }
    let rows = jobs(settings)
        .into_iter()
        .map(|job| {
            let idx = settings.l2.iter().position(|&l| l.to_bits() == job.l2.to_bits()).unwrap_or(0);
            let result = match &weak[idx] {
                Ok(w) => run_job(env, good, w, settings, &job),
                Err(e) => Err(e.clone()),
            };
            SweepRow { job, result: result.map_err(|e| e.to_string()) }
        })
        .collect();
    Ok(rows)
}

/// Per (method, p_full), the row with the best mean score across
/// regularization strengths; ties go to the smaller `l2`.
pub fn best_over_l2(rows: &[EvaluationReport]) -> Vec<EvaluationReport> {
    let mut out: Vec<EvaluationReport> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|o| o.method == r.method && o.env == r.env && o.p_full_target.to_bits() == r.p_full_target.to_bits()) {
            Some(o) => {
                if r.mean_score > o.mean_score || (r.mean_score == o.mean_score && r.l2_lambda < o.l2_lambda) {
                    *o = r.clone();
                }
            }
            None => out.push(r.clone()),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::ParameterVector;
    use crate::env::{GridNavConfig, Sampled};
    use crate::oracle::{build_good_policy, solve, DEFAULT_MAX_ITERS, DEFAULT_TOL};
    use alloc::vec;

    fn setup() -> (Env, GoodPolicy, Model) {
        let env = Env::grid_nav(&GridNavConfig { pits: vec![(2, 2)], slip: 0.1, ..Default::default() }).unwrap();
        let good = build_good_policy(solve(&env, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap(), 0.05).unwrap();
        let spec = ModelSpec::single(env.spec().obs_dim, 0, 4, HeadKind::Softmax, 3);
        let weak = Model::initialized(spec).unwrap();
        (env, good, weak)
    }

    fn meta0(seed_base: u64) -> ReportMeta {
        ReportMeta { method: "m".into(), env: "e".into(), p_full_target: 0.0, l2_lambda: 0.0, seed_base }
    }

    #[test]
    fn cost_arithmetic() {
        let c = CostModel::default();
        assert!((c.avg_cost(0.2) - 46.0).abs() < 1e-12);
        assert!((c.speedup(0.2) - 2.87).abs() < 0.005);
        assert_eq!(c.avg_cost(0.0), 20.0);
        assert!((c.speedup(0.0) - 6.6).abs() < 1e-12);
        assert_eq!(c.speedup(0.3), 132.0 / (18.0 + 2.0 * (1.0 - 0.3) + 132.0 * 0.3));
        assert_eq!(c.plain_cost(CostTag::Full), 132.0);
        assert!(c.gating_pays_off());
        assert!(!CostModel::new(100.0, 40.0, 132.0).unwrap().gating_pays_off());
        assert!(CostModel::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn cost_from_model_counts() {
        let spec = ModelSpec::policy_and_gate(10, 20, 4, HeadKind::Logit, 0);
        let c = CostModel::from_model(&spec, 1, 0, 132.0).unwrap();
        assert!((c.c_gate - (200.0 + 20.0) * 1e-6).abs() < 1e-15);
        assert!((c.c_weak_head - 80.0 * 1e-6).abs() < 1e-15);
    }

    #[test]
    fn random_rule_concentration() {
        let mut r = SplitMix64::new(42);
        let good = (0..10_000).filter(|_| random_switch_rule(0.3, &mut r) == Route::Good).count();
        assert!((good as f64 / 10_000.0 - 0.3).abs() <= 0.02);
        assert!((0..1000).all(|_| random_switch_rule(1.0, &mut r) == Route::Good));
        assert!((0..1000).all(|_| random_switch_rule(0.0, &mut r) == Route::Weak));
    }

    #[test]
    fn naive_rule_examples() {
        let one_hot = ActionDistribution::one_hot(4, 1).unwrap();
        assert_eq!(naive_switch_rule(&one_hot, 1e-9), Route::Weak);
        let u = ActionDistribution::uniform(4).unwrap();
        assert_eq!(naive_switch_rule(&u, libm::log(4.0) - 1e-6), Route::Good);
        let h = [0.05, 0.9, 0.3, 0.7, 0.2, 0.6, 0.1, 0.8, 0.4, 0.5];
        let s: Vec<CalibrationSample> = h.iter().map(|&e| CalibrationSample { g_tilde: 0.0, pi1_entropy: e, state: 0 }).collect();
        let t = calibrate_naive(&s, 0.3).unwrap();
        assert_eq!(h.iter().filter(|&&e| e > t).count(), 3);
    }

    #[test]
    fn random_endpoints_reproduce_plain_policies() {
        let (env, good, weak) = setup();
        for (p, tag) in [(1.0, CostTag::Full), (0.0, CostTag::Weak)] {
            let mut c = CompositePolicy::new(&good, Router::random(p, weak.clone()).unwrap(), CostModel::default()).unwrap();
            for seed in 0..20 {
                let (_, o) = composite_episode(&env, &mut c, seed).unwrap();
                let plain = match tag {
                    CostTag::Full => plain_episode(&env, &good, seed).unwrap(),
                    CostTag::Weak => plain_episode(&env, &ModelPolicy(&weak), seed).unwrap(),
                };
                assert_eq!(o.score.undiscounted_return.to_bits(), plain.score.undiscounted_return.to_bits());
                assert_eq!(o.score.length, plain.score.length);
            }
        }
    }

    #[test]
    fn all_good_composite_acts_like_good_policy() {
        let (env, good, weak) = setup();
        let mut c = CompositePolicy::new(&good, Router::random(1.0, weak).unwrap(), CostModel::default()).unwrap();
        let mut a = SplitMix64::new(5);
        let mut b = SplitMix64::new(5);
        let mut plain = Sampled(&good);
        for s in 0..25 {
            let obs = env.observe(s);
            assert_eq!(c.act(s, &obs, &mut a).unwrap(), plain.act(s, &obs, &mut b).unwrap());
        }
    }

    #[test]
    fn cost_ledger_identity() {
        let (env, good, weak) = setup();
        let mut c = CompositePolicy::new(&good, Router::random(0.4, weak).unwrap(), CostModel::default()).unwrap();
        for seed in 0..10 {
            composite_episode(&env, &mut c, seed).unwrap();
            let f = c.realized_fraction();
            assert!((c.logged_avg_cost() - c.cost_model.avg_cost(f)).abs() <= 1e-9);
            assert_eq!(c.log.len(), c.log.iter().filter(|d| d.route == Route::Good).count() + c.log.iter().filter(|d| d.route == Route::Weak).count());
        }
    }

    #[test]
    fn api_gate_routes_by_probability() {
        let (env, good, _) = setup();
        let spec = api::model_spec(&env, 0, 0);
        let mut params = spec.zeros();
        let gate = spec.head_slots()[1];
        params.0[gate.bias] = libm::log(0.7 / 0.3);
        let bundle = ApiBundle { gate_offset: 0.0, model: Model::new(spec, ParameterVector(params.0)).unwrap(), p_full_target: 0.5, history: vec![], warnings: vec![] };
        assert!((bundle.gate_probability(&env.observe(0)) - 0.7).abs() < 1e-12);
        let mut c = CompositePolicy::new(&good, Router::Api(bundle), CostModel::default()).unwrap();
        assert_eq!(c.route(&env.observe(0)), Route::Good);
    }

    #[test]
    fn plain_good_has_unit_speedup() {
        let (env, good, _) = setup();
        let (r, _) = evaluate_plain(&env, &good, 3, &CostModel::default(), meta0(0)).unwrap();
        assert_eq!(r.realized_fraction_good, 1.0);
        assert_eq!(r.speedup, 1.0);
        assert_eq!(r.n_episodes, 3);
    }

    #[test]
    fn evaluation_is_reproducible() {
        let (env, good, weak) = setup();
        let mut c = CompositePolicy::new(&good, Router::random(0.5, weak).unwrap(), CostModel::default()).unwrap();
        let a = evaluate_composite(&env, &mut c, 5, meta0(10)).unwrap();
        let b = evaluate_composite(&env, &mut c, 5, meta0(10)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_sweep_fractions_and_monotone_scores() {
        let (env, good, weak) = setup();
        let mut scores = vec![];
        for p in [0.0, 0.5, 1.0] {
            let mut c = CompositePolicy::new(&good, Router::random(p, weak.clone()).unwrap(), CostModel::default()).unwrap();
            let (r, _) = evaluate_composite(&env, &mut c, 20, meta0(0)).unwrap();
            assert!((r.realized_fraction_good - p).abs() <= 0.15, "{p} {}", r.realized_fraction_good);
            scores.push(r.mean_score);
        }
        assert!(scores[2] >= scores[0]);
    }

    #[test]
    fn job_listing_and_best_l2() {
        let s = SweepSettings { methods: vec![Method::Api, Method::Random], p_full: vec![0.1, 0.3], l2: vec![0.0, 1e-3], ..Default::default() };
        let j = jobs(&s);
        assert_eq!(j.len(), 1 + 2 * (1 + 2 * 2));
        assert_eq!(j[0].method, Method::Good);
        let mk = |l2: f64, score: f64| EvaluationReport {
            method: "api".into(),
            env: "e".into(),
            p_full_target: 0.3,
            l2_lambda: l2,
            realized_fraction_good: 0.3,
            mean_score: score,
            score_stddev: 0.0,
            n_episodes: 1,
            avg_cost: 1.0,
            speedup: 1.0,
            seed_base: 0,
        };
        let best = best_over_l2(&[mk(0.0, 1.0), mk(1e-5, 2.0), mk(1e-3, 2.0)]);
        assert_eq!(best.len(), 1);
        assert_eq!(best[0].l2_lambda, 1e-5);
        assert_eq!(Method::parse("epi2").unwrap(), Method::Epi2);
        assert!(Method::parse("nope").is_err());
    }
}

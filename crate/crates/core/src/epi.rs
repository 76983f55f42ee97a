//! Entropy-based imitation.
//!
//! Two models are fit on good-policy demonstrations: `g̃` regresses the good
//! policy's entropy `S(π0(x))`, and `π1` minimizes `D(π1(x) ‖ π0(x))`.
//! A threshold rule then decides per state whether the weak or good policy
//! acts. Low predicted good-policy entropy marks a critical state, which goes
//! to the good policy.

use alloc::vec::Vec;

use crate::approx::{self, Example, HeadKind, LossKind, Model, ModelSpec, TrainConfig, TrainReport};
use crate::env::Trajectory;
use crate::math;
use crate::runtime::Route;
use crate::{Error, Result};

/// Slack on the routed fraction when checking EPI-2 feasibility.
pub const DEFAULT_FEASIBILITY_SLACK: f64 = 0.02;
/// Thresholds per axis in the EPI-2 grid search.
pub const DEFAULT_GRID: usize = 10;
/// Probe episodes per grid cell.
pub const DEFAULT_PROBE_EPISODES: usize = 5;

fn examples<F>(dataset: &[Trajectory], mut scalar: F) -> Result<Vec<Example>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut out = Vec::new();
    for traj in dataset {
        for step in &traj.steps {
            let good = step.good.as_ref().ok_or_else(|| {
                Error::InvalidArgument(alloc::format!(
                    "trajectory with seed {} lacks recorded good-policy distributions",
                    traj.seed
                ))
            })?;
            out.push(Example {
                observation: step.observation.clone(),
                dist_target: good.probs().to_vec(),
                scalar_target: scalar(good.probs()),
                weight: 1.0,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("empty demonstration set".into()));
    }
    Ok(approx::compact(out))
}

/// Training examples whose scalar target is `S(π0(x))`.
pub fn entropy_examples(dataset: &[Trajectory]) -> Result<Vec<Example>> {
    examples(dataset, |p| crate::dist::entropy(p).map(|h| h.nats()).unwrap_or(0.0))
}

pub fn imitation_examples(dataset: &[Trajectory]) -> Result<Vec<Example>> {
    examples(dataset, |_| 0.0)
}

fn head_of(spec: &ModelSpec, kind: HeadKind) -> Result<usize> {
    spec.heads
        .iter()
        .position(|h| h.kind == kind)
        .ok_or_else(|| Error::InvalidArgument(alloc::format!("model has no {kind:?} head")))
}

/// Fits `g̃` by mean squared error against the good policy's entropy.
pub fn fit_entropy_regressor(dataset: &[Trajectory], spec: ModelSpec, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    let head = head_of(&spec, HeadKind::Scalar)?;
    let data = entropy_examples(dataset)?;
    let mut params = spec.init()?;
    let report = approx::train(&spec, &mut params, &data, LossKind::MseScalar { head }, cfg)?;
    Ok((Model::new(spec, params)?, report))
}

/// Fits `π1` by minimizing the mean of `D(π1(x) ‖ π0(x))`.
pub fn fit_imitation_policy(dataset: &[Trajectory], spec: ModelSpec, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    let head = head_of(&spec, HeadKind::Softmax)?;
    let data = imitation_examples(dataset)?;
    let mut params = spec.init()?;
    let report = approx::train(&spec, &mut params, &data, LossKind::KlToTarget { head }, cfg)?;
    Ok((Model::new(spec, params)?, report))
}

/// How EPI-2 treats the case the two-threshold rule leaves open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Epi2Variant {
    /// Good iff `g̃ ≤ T1` and `S(π1) > T2`: a low-entropy state the weak
    /// policy is unsure about goes to the good policy.
    Rationale,
    /// Good iff `g̃ ≤ T1` and `S(π1) ≤ T2`; every other case goes to the weak policy.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpiRule {
    Epi1 { t1: f64 },
    Epi2 { t1: f64, t2: f64, variant: Epi2Variant },
}

/// Routes one state. `g_tilde` is the predicted good-policy entropy and
/// `pi1_entropy` the weak policy's own entropy at the state.
pub fn epi_gate(rule: &EpiRule, g_tilde: f64, pi1_entropy: f64) -> Route {
    match *rule {
        EpiRule::Epi1 { t1 } => {
            if g_tilde <= t1 {
                Route::Good
            } else {
                Route::Weak
            }
        }
        EpiRule::Epi2 { t1, t2, variant } => {
            let critical = g_tilde <= t1;
            let good = match variant {
                Epi2Variant::Rationale => critical && pi1_entropy > t2,
                Epi2Variant::Literal => critical && pi1_entropy <= t2,
            };
            if good {
                Route::Good
            } else {
                Route::Weak
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample {
    pub g_tilde: f64,
    pub pi1_entropy: f64,
    pub state: usize,
}

/// One calibration sample per recorded demonstration step.
pub fn calibration_samples(g_tilde: &Model, pi1: &Model, dataset: &[Trajectory]) -> Vec<CalibrationSample> {
    dataset
        .iter()
        .flat_map(|t| &t.steps)
        .map(|s| CalibrationSample {
            g_tilde: g_tilde.scalar(&s.observation),
            pi1_entropy: pi1.distribution(&s.observation).entropy().nats(),
            state: s.state,
        })
        .collect()
}

fn budget_count(p_full: f64, n: usize) -> usize {
    // Small guard so 0.3 * 10 counts as 3 despite rounding.
    (math_floor(p_full * n as f64 + 1e-9) as usize).min(n)
}

fn math_floor(x: f64) -> f64 {
    libm::floor(x)
}

fn check_p_full(p_full: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p_full) {
        return Err(Error::InvalidArgument(alloc::format!("p_full {p_full} outside [0, 1]")));
    }
    Ok(())
}

/// Largest threshold `t` with `#{v ≤ t} ≤ ⌊p_full·n⌋`, chosen among the
/// sample values (or just below the minimum when nothing may pass).
pub fn lower_threshold(values: &[f64], p_full: f64) -> Result<f64> {
    check_p_full(p_full)?;
    if values.is_empty() {
        return Err(Error::InvalidArgument("no calibration samples".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut k = budget_count(p_full, sorted.len());
    // Ties: step down until the threshold admits exactly k values.
    while k > 0 && k < sorted.len() && sorted[k - 1] == sorted[k] {
        k -= 1;
    }
    Ok(if k == 0 { math::next_down(sorted[0]) } else { sorted[k - 1] })
}

/// Smallest threshold `t` with `#{v > t} ≤ ⌊p_full·n⌋`.
pub fn upper_threshold(values: &[f64], p_full: f64) -> Result<f64> {
    check_p_full(p_full)?;
    if values.is_empty() {
        return Err(Error::InvalidArgument("no calibration samples".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = budget_count(p_full, sorted.len());
    Ok(if k == sorted.len() { math::next_down(*sorted.last().unwrap()) } else { sorted[k] })
}

/// EPI-1 threshold: the routed-to-good fraction on the samples is as large
/// as possible without exceeding `p_full`.
pub fn calibrate_epi1(samples: &[CalibrationSample], p_full: f64) -> Result<f64> {
    let values: Vec<f64> = samples.iter().map(|s| s.g_tilde).collect();
    lower_threshold(&values, p_full)
}

/// Candidate thresholds at evenly spaced empirical quantiles, from just
/// below the minimum up to the maximum, without duplicates.
pub fn quantile_candidates(values: &[f64], levels: usize) -> Vec<f64> {
    if values.is_empty() || levels == 0 {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut out: Vec<f64> = Vec::with_capacity(levels);
    for k in 0..levels {
        let t = if k == 0 {
            math::next_down(sorted[0])
        } else if levels == 1 {
            sorted[n - 1]
        } else {
            let level = k as f64 / (levels - 1) as f64;
            let idx = (libm::ceil(level * n as f64) as usize).clamp(1, n) - 1;
            sorted[idx]
        };
        if out.last() != Some(&t) {
            out.push(t);
        }
    }
    out
}

/// What a probe run reports for one candidate rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    pub mean_return: f64,
    pub routed_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationRow {
    pub t1: f64,
    pub t2: f64,
    pub routed_fraction: f64,
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Epi2Calibration {
    pub t1: f64,
    pub t2: f64,
    /// False when no grid cell met the budget; the thresholds are then the
    /// cell with the smallest routed fraction.
    pub feasible: bool,
    /// Every probed cell in grid order.
    pub rows: Vec<CalibrationRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epi2Search {
    pub grid: usize,
    pub slack: f64,
    pub variant: Epi2Variant,
}

impl Default for Epi2Search {
    fn default() -> Self {
        Self { grid: DEFAULT_GRID, slack: DEFAULT_FEASIBILITY_SLACK, variant: Epi2Variant::Rationale }
    }
}

/// Grid search over `(T1, T2)` quantile pairs. `probe` simulates the
/// composite policy with a candidate rule. Among pairs whose simulated
/// routed fraction is at most `p_full + slack`, the highest mean return
/// wins; ties go to the lower routed fraction, then to grid order.
pub fn calibrate_epi2<F>(samples: &[CalibrationSample], p_full: f64, search: &Epi2Search, mut probe: F) -> Result<Epi2Calibration>
where
    F: FnMut(&EpiRule) -> Result<ProbeResult>,
{
    check_p_full(p_full)?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no calibration samples".into()));
    }
    let g: Vec<f64> = samples.iter().map(|s| s.g_tilde).collect();
    let h: Vec<f64> = samples.iter().map(|s| s.pi1_entropy).collect();
    let t1s = quantile_candidates(&g, search.grid);
    let t2s = quantile_candidates(&h, search.grid);
    let mut rows = Vec::with_capacity(t1s.len() * t2s.len());
    for &t1 in &t1s {
        for &t2 in &t2s {
            let r = probe(&EpiRule::Epi2 { t1, t2, variant: search.variant })?;
            rows.push(CalibrationRow { t1, t2, routed_fraction: r.routed_fraction, mean_return: r.mean_return });
        }
    }
    let better = |a: &CalibrationRow, b: &CalibrationRow| {
        a.mean_return > b.mean_return || (a.mean_return == b.mean_return && a.routed_fraction < b.routed_fraction)
    };
    let mut best: Option<&CalibrationRow> = None;
    for r in rows.iter().filter(|r| r.routed_fraction <= p_full + search.slack) {
        if best.is_none_or(|b| better(r, b)) {
            best = Some(r);
        }
    }
    let (chosen, feasible) = match best {
        Some(b) => (*b, true),
        None => {
            let mut m = rows[0];
            for r in &rows[1..] {
                if r.routed_fraction < m.routed_fraction {
                    m = *r;
                }
            }
            (m, false)
        }
    };
    Ok(Epi2Calibration { t1: chosen.t1, t2: chosen.t2, feasible, rows })
}

/// A trained entropy-based router with its weak policy.
#[derive(Debug, Clone, PartialEq)]
pub struct EpiBundle {
    pub g_tilde: Model,
    pub pi1: Model,
    pub rule: EpiRule,
    pub p_full_target: f64,
}

impl EpiBundle {
    pub fn route(&self, observation: &[f64]) -> Route {
        let g = self.g_tilde.scalar(observation);
        let h = match self.rule {
            EpiRule::Epi1 { .. } => 0.0,
            EpiRule::Epi2 { .. } => self.pi1.distribution(observation).entropy().nats(),
        };
        epi_gate(&self.rule, g, h)
    }
}

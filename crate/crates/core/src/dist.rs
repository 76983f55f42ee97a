//! Finite action distributions and the information measures used for routing.
//!
//! All logarithms are natural, so entropies and divergences are in nats.

use alloc::format;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Floor applied to the second argument of every KL divergence.
pub const KL_FLOOR: f64 = 1e-12;

/// Allowed deviation of a probability vector's sum from 1.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Probability vector over at least two actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate(&probs)?;
        Ok(Self { probs })
    }

    pub fn uniform(n_actions: usize) -> Result<Self> {
        if n_actions < 2 {
            return Err(Error::InvalidDistribution(format!(
                "need at least 2 actions, got {n_actions}"
            )));
        }
        Ok(Self { probs: alloc::vec![1.0 / n_actions as f64; n_actions] })
    }

    pub fn one_hot(n_actions: usize, action: usize) -> Result<Self> {
        if action >= n_actions {
            return Err(Error::IndexOutOfRange { what: "action", index: action, bound: n_actions });
        }
        let mut probs = alloc::vec![0.0; n_actions];
        probs[action] = 1.0;
        Self::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability; lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> EntropyValue {
        entropy_of(&self.probs)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

fn validate(probs: &[f64]) -> Result<()> {
    if probs.len() < 2 {
        return Err(Error::InvalidDistribution(format!(
            "need at least 2 actions, got {}",
            probs.len()
        )));
    }
    let mut sum = 0.0;
    for &p in probs {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidDistribution(format!("entry {p} outside [0, 1]")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
    }
    Ok(())
}

/// Shannon entropy in nats; always within `[0, ln n]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EntropyValue(f64);

impl EntropyValue {
    pub fn nats(self) -> f64 {
        self.0
    }
}

fn entropy_of(probs: &[f64]) -> EntropyValue {
    let mut h = 0.0;
    for &p in probs {
        if p > 0.0 {
            h -= p * math::ln(p);
        }
    }
    let max = math::ln(probs.len() as f64);
    EntropyValue(h.clamp(0.0, max))
}

/// `-Σ p ln p` with `0 ln 0 = 0`. Rejects vectors that are not distributions.
pub fn entropy(probs: &[f64]) -> Result<EntropyValue> {
    validate(probs)?;
    Ok(entropy_of(probs))
}

/// `D(p ‖ q) = Σ p ln(p / q)`, with `q` floored at [`KL_FLOOR`].
pub fn kl_divergence(p: &ActionDistribution, q: &ActionDistribution) -> Result<f64> {
    kl_slices(p.probs(), q.probs())
}

pub(crate) fn kl_slices(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), found: q.len() });
    }
    Ok(kl_unchecked(p, q))
}

pub(crate) fn kl_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let mut d = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 && pi != qi {
            d += pi * (math::ln(pi) - math::ln(qi.max(KL_FLOOR)));
        }
    }
    d.max(0.0)
}

/// KL divergence between Bernoulli(`q0`) and Bernoulli(`g0`).
pub fn bernoulli_kl(q0: f64, g0: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q0) {
        return Err(Error::InvalidArgument(format!("q0 = {q0} outside [0, 1]")));
    }
    if !g0.is_finite() {
        return Err(Error::NonFinite("bernoulli_kl g0"));
    }
    Ok(bernoulli_kl_unchecked(q0, g0))
}

pub(crate) fn bernoulli_kl_unchecked(q0: f64, g0: f64) -> f64 {
    let g0 = g0.clamp(KL_FLOOR, 1.0 - KL_FLOOR);
    let mut d = 0.0;
    if q0 > 0.0 {
        d += q0 * (math::ln(q0) - math::ln(g0));
    }
    if q0 < 1.0 {
        d += (1.0 - q0) * (math::ln(1.0 - q0) - math::ln(1.0 - g0));
    }
    d.max(0.0)
}

/// Softmax of `logits` in place, with max subtraction.
pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = math::exp(*z - max);
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
}

/// Boltzmann policy over Q-values: `π(a) ∝ exp(Q(a) / τ)`.
pub fn q_to_policy(q_values: &[f64], temperature: f64) -> Result<ActionDistribution> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature {temperature} must be positive")));
    }
    if q_values.iter().any(|q| !q.is_finite()) {
        return Err(Error::NonFinite("q_values"));
    }
    let mut logits: Vec<f64> = q_values.iter().map(|q| q / temperature).collect();
    softmax_in_place(&mut logits);
    ActionDistribution::new(logits)
}

/// Which cost bucket a policy's evaluation is charged to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostTag {
    /// The expensive good policy.
    Full,
    /// The shared trunk plus weak head.
    Weak,
}

/// A stochastic policy over a finite action set.
///
/// Tabular policies read `state`; learned policies read `observation`.
/// Evaluation must be deterministic for fixed parameters.
pub trait Policy {
    fn n_actions(&self) -> usize;
    fn distribution(&self, state: usize, observation: &[f64]) -> ActionDistribution;
    fn cost_tag(&self) -> CostTag;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn n_actions(&self) -> usize {
        (**self).n_actions()
    }
    fn distribution(&self, state: usize, observation: &[f64]) -> ActionDistribution {
        (**self).distribution(state, observation)
    }
    fn cost_tag(&self) -> CostTag {
        (**self).cost_tag()
    }
}

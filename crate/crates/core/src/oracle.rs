//! Exact Q-values by value iteration, and the Boltzmann good policy built on them.

use alloc::vec;
use alloc::vec::Vec;

use crate::dist::{q_to_policy, ActionDistribution, CostTag, Policy};
use crate::env::{rollout, Env, Sampled, Trajectory, TransitionTable};
use crate::rng::SplitMix64;
use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    q: Vec<f64>,
    /// Sup-norm change of the last sweep.
    pub residual: f64,
    pub iterations: usize,
    /// Sup-norm change of every sweep, in order.
    pub residual_history: Vec<f64>,
}

impl QTable {
    pub fn from_values(n_states: usize, n_actions: usize, q: Vec<f64>) -> Result<Self> {
        if q.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch { expected: n_states * n_actions, found: q.len() });
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("q table"));
        }
        Ok(Self { n_states, n_actions, q, residual: 0.0, iterations: 0, residual_history: Vec::new() })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.q[state * self.n_actions + action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.q[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    /// `V(x) = max_a Q(x, a)`.
    pub fn value(&self, state: usize) -> f64 {
        self.row(state).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action; lowest index wins ties.
    pub fn greedy(&self, state: usize) -> usize {
        let row = self.row(state);
        let mut best = 0;
        for (a, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = a;
            }
        }
        best
    }
}

/// Order in which states are updated within one sweep.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum SweepOrder {
    /// Synchronous: every backup reads the previous sweep's table.
    #[default]
    Jacobi,
    /// In-place, visiting states in the given order.
    GaussSeidel(Vec<usize>),
}

fn backup(table: &TransitionTable, gamma: f64, v: &[f64], s: usize, a: usize) -> f64 {
    let mut acc = 0.0;
    for o in table.outcomes(s, a) {
        acc += o.prob * v[o.next_state];
    }
    table.reward(s, a) + gamma * acc
}

/// Iterates `Q(x,a) = r(x,a) + γ Σ_y P(y|x,a) max_u Q(y,u)` from `Q = 0`
/// until the sup-norm change of a sweep is at most `tol`.
pub fn value_iteration(table: &TransitionTable, gamma: f64, tol: f64, max_iters: usize) -> Result<QTable> {
    value_iteration_ordered(table, gamma, tol, max_iters, &SweepOrder::Jacobi)
}

pub fn value_iteration_ordered(
    table: &TransitionTable,
    gamma: f64,
    tol: f64,
    max_iters: usize,
    order: &SweepOrder,
) -> Result<QTable> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!("gamma {gamma} must lie in (0, 1)")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("tolerance {tol} must be positive")));
    }
    let (ns, na) = (table.n_states(), table.n_actions());
    if let SweepOrder::GaussSeidel(perm) = order {
        let mut seen = vec![false; ns];
        if perm.len() != ns || perm.iter().any(|&s| s >= ns || core::mem::replace(&mut seen[s], true)) {
            return Err(Error::InvalidArgument("sweep order must be a permutation of the states".into()));
        }
    }
    let mut q = vec![0.0; ns * na];
    let mut v = vec![0.0; ns];
    let mut history = Vec::new();
    for iter in 1..=max_iters {
        let mut delta = 0.0f64;
        match order {
            SweepOrder::Jacobi => {
                let mut next = vec![0.0; ns * na];
                for s in 0..ns {
                    for a in 0..na {
                        let new = backup(table, gamma, &v, s, a);
                        delta = delta.max((new - q[s * na + a]).abs());
                        next[s * na + a] = new;
                    }
                }
                q = next;
                for s in 0..ns {
                    v[s] = q[s * na..(s + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                }
            }
            SweepOrder::GaussSeidel(perm) => {
                for &s in perm {
                    for a in 0..na {
                        let new = backup(table, gamma, &v, s, a);
                        delta = delta.max((new - q[s * na + a]).abs());
                        q[s * na + a] = new;
                    }
                    v[s] = q[s * na..(s + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                }
            }
        }
        history.push(delta);
        if delta <= tol {
            return Ok(QTable { n_states: ns, n_actions: na, q, residual: delta, iterations: iter, residual_history: history });
        }
    }
    Err(Error::NotConverged { iterations: max_iters, residual: history.last().copied().unwrap_or(f64::INFINITY) })
}

/// Runs value iteration with the environment's own discount.
pub fn solve(env: &Env, tol: f64, max_iters: usize) -> Result<QTable> {
    value_iteration(env.table(), env.spec().gamma, tol, max_iters)
}

/// Boltzmann policy over an exact Q table, cached per state.
#[derive(Debug, Clone, PartialEq)]
pub struct GoodPolicy {
    q_table: QTable,
    temperature: f64,
    rows: Vec<ActionDistribution>,
}

pub fn build_good_policy(q_table: QTable, temperature: f64) -> Result<GoodPolicy> {
    let rows = (0..q_table.n_states())
        .map(|s| q_to_policy(q_table.row(s), temperature))
        .collect::<Result<Vec<_>>>()?;
    Ok(GoodPolicy { q_table, temperature, rows })
}

impl GoodPolicy {
    pub fn q_table(&self) -> &QTable {
        &self.q_table
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn at(&self, state: usize) -> &ActionDistribution {
        &self.rows[state]
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    /// `S(π0(x))` for every state.
    pub fn entropy_profile(&self) -> Vec<f64> {
        self.rows.iter().map(|d| d.entropy().nats()).collect()
    }
}

impl Policy for GoodPolicy {
    fn n_actions(&self) -> usize {
        self.q_table.n_actions()
    }

    fn distribution(&self, state: usize, _observation: &[f64]) -> ActionDistribution {
        self.rows[state].clone()
    }

    fn cost_tag(&self) -> CostTag {
        CostTag::Full
    }
}

/// Deterministic argmax-of-Q policy.
#[derive(Debug, Clone, Copy)]
pub struct GreedyPolicy<'a>(pub &'a QTable);

impl Policy for GreedyPolicy<'_> {
    fn n_actions(&self) -> usize {
        self.0.n_actions()
    }

    fn distribution(&self, state: usize, _observation: &[f64]) -> ActionDistribution {
        ActionDistribution::one_hot(self.0.n_actions(), self.0.greedy(state)).expect("greedy action in range")
    }

    fn cost_tag(&self) -> CostTag {
        CostTag::Full
    }
}

/// Rolls out the good policy until exactly `n_steps` decisions are
/// recorded, restarting episodes as they end. Episode seeds are drawn from
/// `SplitMix64::new(seed)`. The last episode may be cut short.
pub fn demonstrations(env: &Env, good: &GoodPolicy, n_steps: usize, seed: u64) -> Result<Vec<Trajectory>> {
    let mut seeds = SplitMix64::new(seed);
    let mut out = Vec::new();
    let mut total = 0;
    while total < n_steps {
        let (mut traj, _) = rollout(env, &mut Sampled(good), seeds.next_u64(), Some(good))?;
        traj.steps.truncate(n_steps - total);
        total += traj.steps.len();
        out.push(traj);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GridNavConfig, Outcome};
    use crate::math;

    fn chain() -> TransitionTable {
        // s0 --a--> terminal (reward 1); terminal self-loops with reward 0.
        TransitionTable::new(
            2,
            1,
            vec![
                vec![Outcome { next_state: 1, prob: 1.0, reward: 1.0 }],
                vec![Outcome { next_state: 1, prob: 1.0, reward: 0.0 }],
            ],
        )
        .unwrap()
    }

    #[test]
    fn two_state_chain() {
        let q = value_iteration(&chain(), 0.9, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        assert!((q.get(0, 0) - 1.0).abs() <= 1e-9);
        assert_eq!(q.value(1), 0.0);
    }

    #[test]
    fn near_zero_discount_returns_rewards() {
        let env = crate::env::Env::grid_nav(&GridNavConfig::default()).unwrap();
        let q = value_iteration(env.table(), 1e-9, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        for s in 0..env.n_states() {
            for a in 0..4 {
                assert!((q.get(s, a) - env.table().reward(s, a)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(value_iteration(&chain(), 1.0, 1e-9, 10).is_err());
        assert!(value_iteration(&chain(), 0.9, 0.0, 10).is_err());
    }

    #[test]
    fn reports_non_convergence() {
        let env = crate::env::Env::grid_nav(&GridNavConfig { slip: 0.2, ..Default::default() }).unwrap();
        let err = value_iteration(env.table(), 0.99, 1e-12, 3).unwrap_err();
        assert!(matches!(err, Error::NotConverged { iterations: 3, residual } if residual > 0.0));
    }

    /// Expected discounted return of a deterministic policy by solving the
    /// linear system `V = r + γ P V` with Gaussian elimination.
    fn evaluate_policy(env: &crate::env::Env, policy: &[usize]) -> Vec<f64> {
        let n = env.n_states();
        let g = env.spec().gamma;
        let mut m = vec![vec![0.0; n + 1]; n];
        for s in 0..n {
            m[s][s] = 1.0;
            for o in env.table().outcomes(s, policy[s]) {
                m[s][o.next_state] -= g * o.prob;
            }
            m[s][n] = env.table().reward(s, policy[s]);
        }
        for c in 0..n {
            let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
            m.swap(c, p);
            for r in 0..n {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for k in c..=n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
        (0..n).map(|s| m[s][n] / m[s][s]).collect()
    }

    #[test]
    fn grid_start_value_matches_shortest_path_evaluation() {
        let env = crate::env::Env::grid_nav(&GridNavConfig::default()).unwrap();
        let q = solve(&env, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        // Right along the top row, then down the last column.
        let policy: Vec<usize> = (0..env.n_states()).map(|s| if s % 5 < 4 { 1 } else { 2 }).collect();
        let v = evaluate_policy(&env, &policy);
        let start = env.cell_state(0, 0).unwrap();
        let hand: f64 = (0..7).map(|k| math::powi(0.99, k) * -0.01).sum::<f64>() + math::powi(0.99, 7) * 0.99;
        assert!((v[start] - hand).abs() < 1e-12);
        assert!((q.value(start) - hand).abs() < 1e-9);
    }

    #[test]
    fn greedy_rollout_is_shortest_path() {
        let env = crate::env::Env::grid_nav(&GridNavConfig::default()).unwrap();
        let q = solve(&env, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        let (_, score) = rollout(&env, &mut Sampled(GreedyPolicy(&q)), 0, None).unwrap();
        assert!((score.undiscounted_return - 0.92).abs() <= 1e-9);
    }

    #[test]
    fn residual_is_non_increasing() {
        let env = crate::env::Env::grid_nav(&GridNavConfig { slip: 0.2, pits: vec![(2, 2)], ..Default::default() }).unwrap();
        let q = solve(&env, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        assert!(q.residual <= DEFAULT_TOL);
        for w in q.residual_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "{} then {}", w[0], w[1]);
        }
        assert_eq!(q.value(env.terminal_state()), 0.0);
    }

    #[test]
    fn sweep_order_does_not_change_result() {
        let env = crate::env::Env::grid_nav(&GridNavConfig { slip: 0.1, pits: vec![(1, 3), (3, 1)], ..Default::default() }).unwrap();
        let tol = 1e-10;
        let base = value_iteration(env.table(), 0.99, tol, DEFAULT_MAX_ITERS).unwrap();
        let mut perm: Vec<usize> = (0..env.n_states()).rev().collect();
        let rev = value_iteration_ordered(env.table(), 0.99, tol, DEFAULT_MAX_ITERS, &SweepOrder::GaussSeidel(perm.clone())).unwrap();
        let mut rng = crate::rng::SplitMix64::new(11);
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.below(i + 1));
        }
        let shuffled = value_iteration_ordered(env.table(), 0.99, tol, DEFAULT_MAX_ITERS, &SweepOrder::GaussSeidel(perm)).unwrap();
        for other in [&rev, &shuffled] {
            for (a, b) in base.values().iter().zip(other.values()) {
                assert!((a - b).abs() <= 10.0 * tol, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn good_policy_rows_are_softmax_of_q() {
        let env = crate::env::Env::grid_nav(&GridNavConfig { pits: vec![(2, 2)], ..Default::default() }).unwrap();
        let q = solve(&env, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        let good = build_good_policy(q.clone(), 0.25).unwrap();
        for s in 0..env.n_states() {
            assert_eq!(good.at(s), &q_to_policy(q.row(s), 0.25).unwrap());
        }
        // Terminal has equal Q everywhere.
        assert_eq!(good.at(env.terminal_state()).probs(), &[0.25; 4]);
    }

    #[test]
    fn low_temperature_matches_greedy() {
        let env = crate::env::Env::grid_nav(&GridNavConfig::default()).unwrap();
        let q = solve(&env, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        let good = build_good_policy(q.clone(), 0.001).unwrap();
        for seed in 0..5 {
            let a = rollout(&env, &mut Sampled(&good), seed, None).unwrap().1;
            let b = rollout(&env, &mut Sampled(GreedyPolicy(&q)), seed, None).unwrap().1;
            assert_eq!(a.undiscounted_return, b.undiscounted_return);
        }
    }

    #[test]
    fn entropy_varies_near_pits() {
        let c = GridNavConfig { width: 6, height: 6, goal: (5, 5), pits: vec![(2, 1), (3, 3), (1, 4)], slip: 0.1, ..Default::default() };
        let env = crate::env::Env::grid_nav(&c).unwrap();
        let good = build_good_policy(solve(&env, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap(), 0.25).unwrap();
        let h = good.entropy_profile();
        let live: Vec<f64> = (0..env.n_states() - 1)
            .filter(|&s| !c.pits.contains(&(s % 6, s / 6)) && (s % 6, s / 6) != c.goal)
            .map(|s| h[s])
            .collect();
        assert!(math::stddev(&live) > 0.0);
    }

    #[test]
    fn greedy_beats_uniform_on_average() {
        struct Uniform;
        impl Policy for Uniform {
            fn n_actions(&self) -> usize {
                4
            }
            fn distribution(&self, _: usize, _: &[f64]) -> ActionDistribution {
                ActionDistribution::uniform(4).unwrap()
            }
            fn cost_tag(&self) -> CostTag {
                CostTag::Weak
            }
        }
        let env = crate::env::Env::grid_nav(&GridNavConfig { slip: 0.1, pits: vec![(2, 2), (1, 3)], ..Default::default() }).unwrap();
        let q = solve(&env, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        let mean = |p: &mut dyn crate::env::Actor| {
            (0..20).map(|s| rollout(&env, p, s, None).unwrap().1.undiscounted_return).sum::<f64>() / 20.0
        };
        assert!(mean(&mut Sampled(GreedyPolicy(&q))) >= mean(&mut Sampled(Uniform)));
    }

    #[test]
    fn demonstrations_have_exact_length_and_good_records() {
        let env = crate::env::Env::grid_nav(&GridNavConfig { slip: 0.1, ..Default::default() }).unwrap();
        let good = build_good_policy(solve(&env, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap(), 0.25).unwrap();
        let demos = demonstrations(&env, &good, 100, 3).unwrap();
        assert_eq!(demos.iter().map(|t| t.steps.len()).sum::<usize>(), 100);
        assert!(demos.len() > 1);
        for t in &demos {
            assert!(t.steps.iter().all(|s| s.good.as_ref() == Some(good.at(s.state))));
        }
        assert_eq!(demos, demonstrations(&env, &good, 100, 3).unwrap());
    }
}

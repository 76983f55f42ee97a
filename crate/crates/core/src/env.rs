//! Tabular toy environments.
//!
//! Every environment is fully materialized as a [`TransitionTable`] so the
//! oracle can solve it exactly, and also exposes a feature-vector
//! observation per state for the learned models.
//!
//! Reward convention: rewards are attached to transitions. On `grid_nav` the
//! step cost applies on every move including the one entering a goal or a
//! pit, so reaching the goal pays `1 - step_cost` on that move. The table's
//! `reward(s, a)` is the expectation over next states, which is what the
//! Bellman backup uses.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::dist::{ActionDistribution, Policy};
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// RNG stream ids derived from an episode seed.
pub const STREAM_ENV: u64 = 0;
pub const STREAM_ACTION: u64 = 1;
pub const STREAM_GATE: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub max_steps: usize,
    pub obs_dim: usize,
    pub stochasticity: f64,
}

/// One possible outcome of taking an action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next_state: usize,
    pub prob: f64,
    pub reward: f64,
}

/// Sparse `P(y | x, a)` with per-outcome rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    n_states: usize,
    n_actions: usize,
    rows: Vec<Vec<Outcome>>,
    expected_reward: Vec<f64>,
}

impl TransitionTable {
    /// Builds a table from per-(state, action) outcome lists, merging
    /// duplicate next states. Every row must sum to 1 within 1e-12.
    pub fn new(n_states: usize, n_actions: usize, rows: Vec<Vec<Outcome>>) -> Result<Self> {
        if rows.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch { expected: n_states * n_actions, found: rows.len() });
        }
        let mut merged_rows = Vec::with_capacity(rows.len());
        let mut expected_reward = Vec::with_capacity(rows.len());
        for (idx, row) in rows.into_iter().enumerate() {
            let mut merged: Vec<Outcome> = Vec::with_capacity(row.len());
            let mut total = 0.0;
            let mut r = 0.0;
            for o in row {
                if o.next_state >= n_states {
                    return Err(Error::IndexOutOfRange { what: "next state", index: o.next_state, bound: n_states });
                }
                if !(o.prob >= 0.0) || !o.reward.is_finite() {
                    return Err(Error::InvalidEnvironment(format!("bad outcome in row {idx}: {o:?}")));
                }
                if o.prob == 0.0 {
                    continue;
                }
                total += o.prob;
                r += o.prob * o.reward;
                match merged.iter_mut().find(|m| m.next_state == o.next_state && m.reward == o.reward) {
                    Some(m) => m.prob += o.prob,
                    None => merged.push(o),
                }
            }
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidEnvironment(format!(
                    "row (state {}, action {}) sums to {total}",
                    idx / n_actions,
                    idx % n_actions
                )));
            }
            merged_rows.push(merged);
            expected_reward.push(r);
        }
        Ok(Self { n_states, n_actions, rows: merged_rows, expected_reward })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn outcomes(&self, state: usize, action: usize) -> &[Outcome] {
        &self.rows[state * self.n_actions + action]
    }

    /// Expected immediate reward `r(x, a)`.
    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.expected_reward[state * self.n_actions + action]
    }

    /// `P(next | state, action)`, summed over outcomes landing on `next`.
    pub fn prob(&self, state: usize, action: usize, next: usize) -> f64 {
        self.outcomes(state, action).iter().filter(|o| o.next_state == next).map(|o| o.prob).sum()
    }
}

/// Result of a single environment transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next_state: usize,
    pub reward: f64,
    /// The next state is the absorbing terminal.
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAction {
    Up = 0,
    Right = 1,
    Down = 2,
    Left = 3,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [GridAction::Up, GridAction::Right, GridAction::Down, GridAction::Left];

    fn delta(self) -> (i64, i64) {
        match self {
            GridAction::Up => (0, -1),
            GridAction::Right => (1, 0),
            GridAction::Down => (0, 1),
            GridAction::Left => (-1, 0),
        }
    }

    fn perpendicular(self) -> [GridAction; 2] {
        match self {
            GridAction::Up | GridAction::Down => [GridAction::Left, GridAction::Right],
            GridAction::Left | GridAction::Right => [GridAction::Up, GridAction::Down],
        }
    }
}

/// Parameters for `grid_nav`. Cells are `(x, y)` with `x` the column.
#[derive(Debug, Clone, PartialEq)]
pub struct GridNavConfig {
    pub width: usize,
    pub height: usize,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    pub pits: Vec<(usize, usize)>,
    /// Probability of moving in a random perpendicular direction instead.
    pub slip: f64,
    pub gamma: f64,
    pub max_steps: usize,
    pub goal_reward: f64,
    pub pit_reward: f64,
    pub step_cost: f64,
}

impl Default for GridNavConfig {
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            start: (0, 0),
            goal: (4, 4),
            pits: Vec::new(),
            slip: 0.0,
            gamma: 0.99,
            max_steps: 50,
            goal_reward: 1.0,
            pit_reward: -1.0,
            step_cost: 0.01,
        }
    }
}

/// Parameters for `corridor_catch`: an object falls one row per step down a
/// column while the paddle on the bottom row moves left, stays, or moves right.
#[derive(Debug, Clone, PartialEq)]
pub struct CorridorCatchConfig {
    pub width: usize,
    /// Rows including the paddle row; the object needs `height - 1` steps to land.
    pub height: usize,
    /// Objects dropped per episode.
    pub drops: usize,
    /// Probability that the paddle executes a uniformly random action.
    pub slip: f64,
    pub gamma: f64,
    pub max_steps: usize,
}

impl Default for CorridorCatchConfig {
    fn default() -> Self {
        Self { width: 7, height: 7, drops: 3, slip: 0.0, gamma: 0.99, max_steps: 18 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layout {
    GridNav(GridNavConfig),
    CorridorCatch(CorridorCatchConfig),
}

/// A fully materialized tabular MDP plus its observation encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    spec: EnvSpec,
    table: TransitionTable,
    layout: Layout,
    terminal: usize,
    initial: Vec<(usize, f64)>,
}

/// String-keyed environment parameters, as read from a config file.
pub type EnvParams = BTreeMap<String, String>;

/// Builds `grid_nav` or `corridor_catch` from string parameters. Unset keys
/// keep their defaults; unknown keys are rejected.
pub fn make_env(name: &str, params: &EnvParams) -> Result<Env> {
    match name {
        "grid_nav" => {
            let mut c = GridNavConfig::default();
            for (k, v) in params {
                match k.as_str() {
                    "width" => c.width = parse(k, v)?,
                    "height" => c.height = parse(k, v)?,
                    "start" => c.start = parse_cell(k, v)?,
                    "goal" => c.goal = parse_cell(k, v)?,
                    "pits" => c.pits = parse_cells(k, v)?,
                    "slip" => c.slip = parse(k, v)?,
                    "gamma" => c.gamma = parse(k, v)?,
                    "max_steps" => c.max_steps = parse(k, v)?,
                    "goal_reward" => c.goal_reward = parse(k, v)?,
                    "pit_reward" => c.pit_reward = parse(k, v)?,
                    "step_cost" => c.step_cost = parse(k, v)?,
                    _ => return Err(Error::InvalidArgument(format!("unknown grid_nav parameter `{k}`"))),
                }
            }
            Env::grid_nav(&c)
        }
        "corridor_catch" => {
            let mut c = CorridorCatchConfig::default();
            for (k, v) in params {
                match k.as_str() {
                    "width" => c.width = parse(k, v)?,
                    "height" => c.height = parse(k, v)?,
                    "drops" => c.drops = parse(k, v)?,
                    "slip" => c.slip = parse(k, v)?,
                    "gamma" => c.gamma = parse(k, v)?,
                    "max_steps" => c.max_steps = parse(k, v)?,
                    _ => return Err(Error::InvalidArgument(format!("unknown corridor_catch parameter `{k}`"))),
                }
            }
            Env::corridor_catch(&c)
        }
        other => Err(Error::UnknownEnvironment(other.to_string())),
    }
}

fn parse<T: core::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("cannot parse `{value}` for `{key}`")))
}

/// Cells are written `x:y`.
fn parse_cell(key: &str, value: &str) -> Result<(usize, usize)> {
    let (x, y) = value
        .trim()
        .split_once(':')
        .ok_or_else(|| Error::InvalidArgument(format!("`{key}` expects x:y, got `{value}`")))?;
    Ok((parse(key, x)?, parse(key, y)?))
}

/// Comma-separated `x:y` cells; empty string means none.
fn parse_cells(key: &str, value: &str) -> Result<Vec<(usize, usize)>> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_cell(key, s)).collect()
}

pub(crate) fn format_cells(cells: &[(usize, usize)]) -> String {
    let parts: Vec<String> = cells.iter().map(|(x, y)| format!("{x}:{y}")).collect();
    parts.join(",")
}

fn check_common(gamma: f64, slip: f64, max_steps: usize) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidEnvironment(format!("gamma {gamma} must lie in (0, 1)")));
    }
    if !(0.0..1.0).contains(&slip) {
        return Err(Error::InvalidEnvironment(format!("slip {slip} must lie in [0, 1)")));
    }
    if max_steps == 0 {
        return Err(Error::InvalidEnvironment("max_steps must be positive".into()));
    }
    Ok(())
}

impl Env {
    pub fn grid_nav(c: &GridNavConfig) -> Result<Self> {
        check_common(c.gamma, c.slip, c.max_steps)?;
        let (w, h) = (c.width, c.height);
        if w < 2 || h < 2 {
            return Err(Error::InvalidEnvironment("grid must be at least 2x2".into()));
        }
        let inside = |(x, y): (usize, usize)| x < w && y < h;
        if !inside(c.start) || !inside(c.goal) || !c.pits.iter().all(|&p| inside(p)) {
            return Err(Error::InvalidEnvironment("cell outside the grid".into()));
        }
        if c.start == c.goal {
            return Err(Error::InvalidEnvironment("goal equals start".into()));
        }
        if c.pits.contains(&c.start) || c.pits.contains(&c.goal) {
            return Err(Error::InvalidEnvironment("start or goal placed on a pit".into()));
        }

        let n_cells = w * h;
        let terminal = n_cells;
        let n_states = n_cells + 1;
        let idx = |x: usize, y: usize| y * w + x;
        let mut rows = Vec::with_capacity(n_states * 4);
        for s in 0..n_states {
            for &a in &GridAction::ALL {
                if s == terminal || (s % w, s / w) == c.goal || c.pits.contains(&(s % w, s / w)) {
                    // Goal and pit cells are never occupied; they behave as absorbing.
                    rows.push(vec![Outcome { next_state: terminal, prob: 1.0, reward: 0.0 }]);
                    continue;
                }
                let (x, y) = (s % w, s / w);
                let mut moves = vec![(a, 1.0 - c.slip)];
                if c.slip > 0.0 {
                    for p in a.perpendicular() {
                        moves.push((p, c.slip / 2.0));
                    }
                }
                let row = moves
                    .into_iter()
                    .map(|(m, prob)| {
                        let (dx, dy) = m.delta();
                        let nx = x as i64 + dx;
                        let ny = y as i64 + dy;
                        let (nx, ny) = if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            (x, y)
                        } else {
                            (nx as usize, ny as usize)
                        };
                        if (nx, ny) == c.goal {
                            Outcome { next_state: terminal, prob, reward: c.goal_reward - c.step_cost }
                        } else if c.pits.contains(&(nx, ny)) {
                            Outcome { next_state: terminal, prob, reward: c.pit_reward - c.step_cost }
                        } else {
                            Outcome { next_state: idx(nx, ny), prob, reward: -c.step_cost }
                        }
                    })
                    .collect();
                rows.push(row);
            }
        }
        let table = TransitionTable::new(n_states, 4, rows)?;

        // The goal must be reachable from the start without entering a pit.
        let mut seen = vec![false; n_states];
        let mut queue = VecDeque::from([idx(c.start.0, c.start.1)]);
        seen[idx(c.start.0, c.start.1)] = true;
        let mut reaches_goal = false;
        while let Some(s) = queue.pop_front() {
            for a in 0..4 {
                for o in table.outcomes(s, a) {
                    if o.next_state == terminal {
                        if o.reward > c.pit_reward - c.step_cost {
                            reaches_goal = true;
                        }
                    } else if !seen[o.next_state] {
                        seen[o.next_state] = true;
                        queue.push_back(o.next_state);
                    }
                }
            }
        }
        if !reaches_goal {
            return Err(Error::InvalidEnvironment("goal unreachable from start".into()));
        }

        Ok(Self {
            spec: EnvSpec {
                name: "grid_nav".into(),
                n_states,
                n_actions: 4,
                gamma: c.gamma,
                max_steps: c.max_steps,
                obs_dim: w + h + 2,
                stochasticity: c.slip,
            },
            table,
            layout: Layout::GridNav(c.clone()),
            terminal,
            initial: vec![(idx(c.start.0, c.start.1), 1.0)],
        })
    }

    pub fn corridor_catch(c: &CorridorCatchConfig) -> Result<Self> {
        check_common(c.gamma, c.slip, c.max_steps)?;
        let (w, h, d) = (c.width, c.height, c.drops);
        if w < 2 || h < 2 || d == 0 {
            return Err(Error::InvalidEnvironment("corridor_catch needs width, height >= 2 and drops >= 1".into()));
        }
        if h - 1 < w - 1 {
            // A centered or edge paddle could never reach the far column in time.
            return Err(Error::InvalidEnvironment(format!(
                "height {h} too small: the paddle needs up to {} moves",
                w - 1
            )));
        }
        let rows_per_drop = h - 1;
        let n_live = w * rows_per_drop * w * d;
        let terminal = n_live;
        let n_states = n_live + 1;
        let layout = CorridorState { width: w, rows: rows_per_drop, drops: d };
        let n_actions = 3;
        let mut rows = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                if s == terminal {
                    rows.push(vec![Outcome { next_state: terminal, prob: 1.0, reward: 0.0 }]);
                    continue;
                }
                let st = layout.decode(s);
                let mut moves = vec![(a, 1.0 - c.slip)];
                if c.slip > 0.0 {
                    for m in 0..n_actions {
                        moves.push((m, c.slip / n_actions as f64));
                    }
                }
                let mut row = Vec::new();
                for (m, prob) in moves {
                    let paddle = match m {
                        0 => st.paddle.saturating_sub(1),
                        1 => st.paddle,
                        _ => (st.paddle + 1).min(w - 1),
                    };
                    if st.height > 1 {
                        let next = CorridorFields { height: st.height - 1, paddle, ..st };
                        row.push(Outcome { next_state: layout.encode(next), prob, reward: 0.0 });
                    } else {
                        let reward = if paddle == st.column { 1.0 } else { -1.0 };
                        if st.drops_left == 1 {
                            row.push(Outcome { next_state: terminal, prob, reward });
                        } else {
                            for col in 0..w {
                                let next = CorridorFields {
                                    column: col,
                                    height: rows_per_drop,
                                    paddle,
                                    drops_left: st.drops_left - 1,
                                };
                                row.push(Outcome {
                                    next_state: layout.encode(next),
                                    prob: prob / w as f64,
                                    reward,
                                });
                            }
                        }
                    }
                }
                rows.push(row);
            }
        }
        let table = TransitionTable::new(n_states, n_actions, rows)?;
        let initial = (0..w)
            .map(|col| {
                let st = CorridorFields { column: col, height: rows_per_drop, paddle: w / 2, drops_left: d };
                (layout.encode(st), 1.0 / w as f64)
            })
            .collect();
        Ok(Self {
            spec: EnvSpec {
                name: "corridor_catch".into(),
                n_states,
                n_actions,
                gamma: c.gamma,
                max_steps: c.max_steps,
                obs_dim: w + rows_per_drop + w + d,
                stochasticity: c.slip,
            },
            table,
            layout: Layout::CorridorCatch(c.clone()),
            terminal,
            initial,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn table(&self) -> &TransitionTable {
        &self.table
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn terminal_state(&self) -> usize {
        self.terminal
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        state == self.terminal
    }

    pub fn n_states(&self) -> usize {
        self.spec.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.spec.n_actions
    }

    /// Initial-state distribution as `(state, probability)` pairs.
    pub fn initial_states(&self) -> &[(usize, f64)] {
        &self.initial
    }

    /// Grid cell index for `grid_nav`.
    pub fn cell_state(&self, x: usize, y: usize) -> Option<usize> {
        match &self.layout {
            Layout::GridNav(c) if x < c.width && y < c.height => Some(y * c.width + x),
            _ => None,
        }
    }

    pub fn sample_initial(&self, rng: &mut SplitMix64) -> usize {
        if self.initial.len() == 1 {
            return self.initial[0].0;
        }
        let probs: Vec<f64> = self.initial.iter().map(|&(_, p)| p).collect();
        self.initial[rng.categorical(&probs)].0
    }

    /// Samples one transition from the table row of `(state, action)`.
    pub fn step(&self, state: usize, action: usize, rng: &mut SplitMix64) -> Result<Transition> {
        if state >= self.spec.n_states {
            return Err(Error::IndexOutOfRange { what: "state", index: state, bound: self.spec.n_states });
        }
        if action >= self.spec.n_actions {
            return Err(Error::IndexOutOfRange { what: "action", index: action, bound: self.spec.n_actions });
        }
        let outcomes = self.table.outcomes(state, action);
        let o = if outcomes.len() == 1 {
            outcomes[0]
        } else {
            let probs: Vec<f64> = outcomes.iter().map(|o| o.prob).collect();
            outcomes[rng.categorical(&probs)]
        };
        Ok(Transition { next_state: o.next_state, reward: o.reward, terminal: o.next_state == self.terminal })
    }

    /// Feature vector for `state`; all entries lie in `[-1, 1]`.
    ///
    /// `grid_nav`: one-hot row, one-hot column, then goal-relative offsets
    /// `(gx - x) / (w - 1)` and `(gy - y) / (h - 1)`.
    /// `corridor_catch`: one-hot object column, one-hot object height,
    /// one-hot paddle column, one-hot drops remaining.
    /// The terminal state encodes as all zeros.
    pub fn observe(&self, state: usize) -> Vec<f64> {
        let mut obs = vec![0.0; self.spec.obs_dim];
        if state >= self.terminal {
            return obs;
        }
        match &self.layout {
            Layout::GridNav(c) => {
                let (x, y) = (state % c.width, state / c.width);
                obs[y] = 1.0;
                obs[c.height + x] = 1.0;
                obs[c.height + c.width] = (c.goal.0 as f64 - x as f64) / (c.width - 1) as f64;
                obs[c.height + c.width + 1] = (c.goal.1 as f64 - y as f64) / (c.height - 1) as f64;
            }
            Layout::CorridorCatch(c) => {
                let layout = CorridorState { width: c.width, rows: c.height - 1, drops: c.drops };
                let st = layout.decode(state);
                let mut off = 0;
                obs[off + st.column] = 1.0;
                off += c.width;
                obs[off + st.height - 1] = 1.0;
                off += layout.rows;
                obs[off + st.paddle] = 1.0;
                off += c.width;
                obs[off + st.drops_left - 1] = 1.0;
            }
        }
        obs
    }

    /// Observations for every state, indexed by state.
    pub fn observation_table(&self) -> Vec<Vec<f64>> {
        (0..self.spec.n_states).map(|s| self.observe(s)).collect()
    }

    /// Named parameters that rebuild this environment via [`make_env`].
    pub fn params(&self) -> EnvParams {
        let mut p = EnvParams::new();
        let mut put = |k: &str, v: String| {
            p.insert(k.into(), v);
        };
        match &self.layout {
            Layout::GridNav(c) => {
                put("width", format!("{}", c.width));
                put("height", format!("{}", c.height));
                put("start", format_cells(&[c.start]));
                put("goal", format_cells(&[c.goal]));
                put("pits", format_cells(&c.pits));
                put("slip", format!("{}", c.slip));
                put("gamma", format!("{}", c.gamma));
                put("max_steps", format!("{}", c.max_steps));
                put("goal_reward", format!("{}", c.goal_reward));
                put("pit_reward", format!("{}", c.pit_reward));
                put("step_cost", format!("{}", c.step_cost));
            }
            Layout::CorridorCatch(c) => {
                put("width", format!("{}", c.width));
                put("height", format!("{}", c.height));
                put("drops", format!("{}", c.drops));
                put("slip", format!("{}", c.slip));
                put("gamma", format!("{}", c.gamma));
                put("max_steps", format!("{}", c.max_steps));
            }
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CorridorFields {
    column: usize,
    /// 1..=rows; the object lands when it leaves height 1.
    height: usize,
    paddle: usize,
    /// 1..=drops, counting the object currently falling.
    drops_left: usize,
}

#[derive(Debug, Clone, Copy)]
struct CorridorState {
    width: usize,
    rows: usize,
    drops: usize,
}

impl CorridorState {
    fn encode(&self, f: CorridorFields) -> usize {
        ((f.drops_left - 1) * self.width * self.rows + (f.height - 1) * self.width + f.paddle) * self.width + f.column
    }

    fn decode(&self, s: usize) -> CorridorFields {
        debug_assert!(s < self.width * self.rows * self.width * self.drops);
        let column = s % self.width;
        let rest = s / self.width;
        let paddle = rest % self.width;
        let rest = rest / self.width;
        let height = rest % self.rows + 1;
        let drops_left = rest / self.rows + 1;
        CorridorFields { column, height, paddle, drops_left }
    }
}

/// One recorded decision.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub state: usize,
    pub observation: Vec<f64>,
    /// The good policy's distribution at this state, when recording was requested.
    pub good: Option<ActionDistribution>,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeScore {
    pub undiscounted_return: f64,
    pub length: usize,
    pub seed: u64,
}

/// Something that picks actions during a rollout.
///
/// `rng` is the episode's action stream; implementations that need
/// additional randomness (e.g. a random router) keep their own stream,
/// reseeded in [`Actor::begin_episode`], so action sampling is unaffected.
pub trait Actor {
    fn n_actions(&self) -> usize;
    fn begin_episode(&mut self, _seed: u64) {}
    fn act(&mut self, state: usize, observation: &[f64], rng: &mut SplitMix64) -> Result<usize>;
}

/// Samples actions from a [`Policy`]'s distribution.
#[derive(Debug, Clone)]
pub struct Sampled<P>(pub P);

impl<P: Policy> Actor for Sampled<P> {
    fn n_actions(&self) -> usize {
        self.0.n_actions()
    }

    fn act(&mut self, state: usize, observation: &[f64], rng: &mut SplitMix64) -> Result<usize> {
        let d = self.0.distribution(state, observation);
        if d.len() != self.0.n_actions() {
            return Err(Error::DimensionMismatch { expected: self.0.n_actions(), found: d.len() });
        }
        Ok(rng.categorical(d.probs()))
    }
}

/// Runs one episode of `actor` on `env`.
///
/// The environment draws from stream [`STREAM_ENV`] of `seed` and actions
/// from stream [`STREAM_ACTION`]. When `record_good` is given, its
/// distribution is stored on every step.
pub fn rollout<A: Actor + ?Sized>(
    env: &Env,
    actor: &mut A,
    seed: u64,
    record_good: Option<&dyn Policy>,
) -> Result<(Trajectory, EpisodeScore)> {
    if actor.n_actions() != env.n_actions() {
        return Err(Error::DimensionMismatch { expected: env.n_actions(), found: actor.n_actions() });
    }
    let mut env_rng = SplitMix64::stream(seed, STREAM_ENV);
    let mut act_rng = SplitMix64::stream(seed, STREAM_ACTION);
    actor.begin_episode(seed);
    let mut state = env.sample_initial(&mut env_rng);
    let mut steps = Vec::new();
    let mut total = 0.0;
    for t in 0..env.spec.max_steps {
        let observation = env.observe(state);
        let good = record_good.map(|g| g.distribution(state, &observation));
        let action = actor.act(state, &observation, &mut act_rng)?;
        let tr = env.step(state, action, &mut env_rng)?;
        total += tr.reward;
        let done = tr.terminal || t + 1 == env.spec.max_steps;
        steps.push(TrajectoryStep { state, observation, good, action, reward: tr.reward, done });
        state = tr.next_state;
        if done {
            break;
        }
    }
    let length = steps.len();
    Ok((Trajectory { steps, seed }, EpisodeScore { undiscounted_return: total, length, seed }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::CostTag;

    struct Fixed(usize, usize);
    impl Policy for Fixed {
        fn n_actions(&self) -> usize {
            self.1
        }
        fn distribution(&self, _: usize, _: &[f64]) -> ActionDistribution {
            ActionDistribution::one_hot(self.1, self.0).unwrap()
        }
        fn cost_tag(&self) -> CostTag {
            CostTag::Full
        }
    }

    struct Uniform(usize);
    impl Policy for Uniform {
        fn n_actions(&self) -> usize {
            self.0
        }
        fn distribution(&self, _: usize, _: &[f64]) -> ActionDistribution {
            ActionDistribution::uniform(self.0).unwrap()
        }
        fn cost_tag(&self) -> CostTag {
            CostTag::Weak
        }
    }

    /// Moves right along the top row, then down the last column.
    struct RightThenDown(usize);
    impl Policy for RightThenDown {
        fn n_actions(&self) -> usize {
            4
        }
        fn distribution(&self, state: usize, _: &[f64]) -> ActionDistribution {
            let a = if state % self.0 + 1 < self.0 { GridAction::Right } else { GridAction::Down };
            ActionDistribution::one_hot(4, a as usize).unwrap()
        }
        fn cost_tag(&self) -> CostTag {
            CostTag::Full
        }
    }

    fn grid5() -> Env {
        Env::grid_nav(&GridNavConfig::default()).unwrap()
    }

    #[test]
    fn grid_nav_sizes() {
        let env = grid5();
        assert_eq!(env.n_states(), 26);
        assert_eq!(env.n_actions(), 4);
        assert_eq!(env.spec().obs_dim, 12);
    }

    #[test]
    fn degenerate_grids_rejected() {
        let c = GridNavConfig { goal: (0, 0), ..Default::default() };
        assert!(matches!(Env::grid_nav(&c), Err(Error::InvalidEnvironment(_))));
        // Goal walled off by pits.
        let c = GridNavConfig { pits: vec![(3, 4), (4, 3), (3, 3)], ..Default::default() };
        assert!(Env::grid_nav(&c).is_err());
        let c = GridNavConfig { gamma: 1.0, ..Default::default() };
        assert!(Env::grid_nav(&c).is_err());
    }

    #[test]
    fn make_env_by_name() {
        let mut p = EnvParams::new();
        p.insert("width".into(), "7".into());
        let env = make_env("corridor_catch", &p).unwrap();
        assert_eq!(env.n_actions(), 3);
        assert!(matches!(make_env("pong", &p), Err(Error::UnknownEnvironment(_))));
        p.insert("bogus".into(), "1".into());
        assert!(make_env("corridor_catch", &p).is_err());
    }

    #[test]
    fn params_round_trip() {
        let c = GridNavConfig { pits: vec![(1, 1), (2, 3)], slip: 0.1, ..Default::default() };
        let env = Env::grid_nav(&c).unwrap();
        assert_eq!(make_env("grid_nav", &env.params()).unwrap(), env);
        let env = Env::corridor_catch(&CorridorCatchConfig::default()).unwrap();
        assert_eq!(make_env("corridor_catch", &env.params()).unwrap(), env);
    }

    #[test]
    fn deterministic_step_right() {
        let env = grid5();
        let mut rng = SplitMix64::new(0);
        let tr = env.step(env.cell_state(0, 0).unwrap(), GridAction::Right as usize, &mut rng).unwrap();
        assert_eq!(tr.next_state, env.cell_state(1, 0).unwrap());
        assert_eq!(tr.reward, -0.01);
        assert!(!tr.terminal);
    }

    #[test]
    fn entering_goal_pays_goal_minus_step_cost() {
        let env = grid5();
        let mut rng = SplitMix64::new(0);
        let tr = env.step(env.cell_state(4, 3).unwrap(), GridAction::Down as usize, &mut rng).unwrap();
        assert!(tr.terminal);
        assert_eq!(tr.reward, 1.0 - 0.01);
    }

    #[test]
    fn step_rejects_bad_indices() {
        let env = grid5();
        let mut rng = SplitMix64::new(0);
        assert!(env.step(26, 0, &mut rng).is_err());
        assert!(env.step(0, 4, &mut rng).is_err());
    }

    #[test]
    fn terminal_self_loops_with_zero_reward() {
        for env in [grid5(), Env::corridor_catch(&CorridorCatchConfig::default()).unwrap()] {
            let t = env.terminal_state();
            for a in 0..env.n_actions() {
                assert_eq!(env.table().outcomes(t, a), &[Outcome { next_state: t, prob: 1.0, reward: 0.0 }]);
            }
        }
    }

    #[test]
    fn rows_are_distributions_with_slip() {
        let c = GridNavConfig { slip: 0.2, pits: vec![(2, 2)], ..Default::default() };
        let env = Env::grid_nav(&c).unwrap();
        for s in 0..env.n_states() {
            for a in 0..4 {
                let total: f64 = (0..env.n_states()).map(|y| env.table().prob(s, a, y)).sum();
                assert!((total - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn observation_encoding() {
        let env = grid5();
        let obs = env.observe(env.cell_state(2, 3).unwrap());
        assert_eq!(obs[..10].iter().filter(|&&v| v == 1.0).count(), 2);
        assert_eq!(obs[3], 1.0);
        assert_eq!(obs[5 + 2], 1.0);
        for e in [grid5(), Env::corridor_catch(&CorridorCatchConfig::default()).unwrap()] {
            let table = e.observation_table();
            for (i, a) in table.iter().enumerate() {
                assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
                for b in &table[i + 1..] {
                    assert_ne!(a, b);
                }
            }
        }
    }

    #[test]
    fn corridor_state_codec_round_trips() {
        let l = CorridorState { width: 7, rows: 6, drops: 3 };
        for s in 0..7 * 6 * 7 * 3 {
            assert_eq!(l.encode(l.decode(s)), s);
        }
    }

    #[test]
    fn corridor_catch_episode_length() {
        let env = Env::corridor_catch(&CorridorCatchConfig::default()).unwrap();
        let (traj, score) = rollout(&env, &mut Sampled(Uniform(3)), 4, None).unwrap();
        assert_eq!(score.length, 18);
        assert!(traj.steps.last().unwrap().done);
        let nonzero = traj.steps.iter().filter(|s| s.reward != 0.0).count();
        assert_eq!(nonzero, 3);
    }

    #[test]
    fn shortest_path_return() {
        let env = grid5();
        let (traj, score) = rollout(&env, &mut Sampled(RightThenDown(5)), 0, None).unwrap();
        assert_eq!(score.length, 8);
        assert!((score.undiscounted_return - 0.92).abs() < 1e-12);
        assert!(traj.steps.iter().rev().skip(1).all(|s| !s.done));
    }

    #[test]
    fn budget_exhaustion_scores_step_costs() {
        let c = GridNavConfig { max_steps: 12, ..Default::default() };
        let env = Env::grid_nav(&c).unwrap();
        // Pushing into the top wall never ends the episode.
        let (traj, score) = rollout(&env, &mut Sampled(Fixed(GridAction::Up as usize, 4)), 1, None).unwrap();
        assert_eq!(score.length, 12);
        assert!(traj.steps.last().unwrap().done);
        assert!((score.undiscounted_return + 0.12).abs() < 1e-12);
    }

    #[test]
    fn rollouts_are_reproducible_and_record_good() {
        let c = GridNavConfig { slip: 0.3, pits: vec![(2, 2)], ..Default::default() };
        let env = Env::grid_nav(&c).unwrap();
        let good = Uniform(4);
        let a = rollout(&env, &mut Sampled(Uniform(4)), 7, Some(&good)).unwrap();
        let b = rollout(&env, &mut Sampled(Uniform(4)), 7, Some(&good)).unwrap();
        assert_eq!(a, b);
        assert!(a.0.steps.iter().all(|s| s.good.is_some()));
    }

    #[test]
    fn uniform_policy_pinned_return() {
        let env = grid5();
        let (_, score) = rollout(&env, &mut Sampled(Uniform(4)), 7, None).unwrap();
        // Pinned from the first run of this simulator.
        assert_eq!(score.undiscounted_return.to_bits(), PINNED_UNIFORM_RETURN_SEED7.to_bits());
    }

    // 50 wandering steps without reaching the goal.
    const PINNED_UNIFORM_RETURN_SEED7: f64 = -0.5000000000000002;

    #[test]
    fn rollout_checks_action_count() {
        let env = grid5();
        assert!(rollout(&env, &mut Sampled(Uniform(3)), 0, None).is_err());
    }

    #[test]
    fn grid_returns_bounded() {
        let c = GridNavConfig { slip: 0.2, pits: vec![(1, 1), (3, 2)], ..Default::default() };
        let env = Env::grid_nav(&c).unwrap();
        for seed in 0..50 {
            let (_, s) = rollout(&env, &mut Sampled(Uniform(4)), seed, None).unwrap();
            assert!(s.undiscounted_return <= 1.0);
            assert!(s.undiscounted_return >= -1.0 - 0.01 * c.max_steps as f64);
        }
    }
}

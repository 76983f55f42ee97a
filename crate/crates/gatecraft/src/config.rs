//! Flat `section.key = value` config files.
//!
//! ```text
//! # grid with two pits
//! env.name = grid_nav
//! env.pits = 1:1,3:2
//! oracle.temperature = 0.25
//! sweep.p_full = 0.1, 0.3, 0.5
//! ```
//!
//! Keys under `env.` other than `env.name` are handed to the environment
//! builder. Every other key must be one listed in [`Config::set`]; anything
//! else is rejected.

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use gatecraft_core::env::{make_env, Env, EnvParams};
use gatecraft_core::epi::Epi2Variant;
use gatecraft_core::oracle::{self, GoodPolicy, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use gatecraft_core::runtime::{CostModel, Method, SweepSettings};
use gatecraft_core::api;

use crate::error::{HarnessError, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.25;

/// The single configuration a `train-*` or `eval` command works on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub method: Method,
    pub p_full: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub env_name: String,
    pub env_params: EnvParams,
    pub temperature: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub sweep: SweepSettings,
    /// Derive gate and weak-head costs from the API network's MAC counts.
    pub cost_from_model: bool,
    pub target: Target,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            env_name: "grid_nav".into(),
            env_params: EnvParams::new(),
            temperature: DEFAULT_TEMPERATURE,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            sweep: SweepSettings::default(),
            cost_from_model: false,
            target: Target { method: Method::Epi2, p_full: 0.3, l2: 0.0 },
        }
    }
}

fn bad(key: &str, value: &str) -> HarnessError {
    HarnessError::Config(format!("cannot parse `{value}` for `{key}`"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|s| s.trim()).filter(|s| !s.is_empty()).map(|s| num(key, s)).collect()
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected `section.key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !key.contains('.') {
                return Err(HarnessError::Config(format!("line {}: key `{key}` has no section", n + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(HarnessError::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
            cfg.set(key, value).map_err(|e| match e {
                HarnessError::Config(m) => HarnessError::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.sweep;
        match key {
            "env.name" => self.env_name = value.to_string(),
            k if k.starts_with("env.") => {
                self.env_params.insert(k["env.".len()..].to_string(), value.to_string());
            }
            "oracle.temperature" => self.temperature = num(key, value)?,
            "oracle.tol" => self.tol = num(key, value)?,
            "oracle.max_iters" => self.max_iters = num(key, value)?,

            "train.iterations" => s.train.iterations = num(key, value)?,
            "train.batch_size" => s.train.batch_size = num(key, value)?,
            "train.lr" => s.train.adam.lr = num(key, value)?,
            "train.beta1" => s.train.adam.beta1 = num(key, value)?,
            "train.beta2" => s.train.adam.beta2 = num(key, value)?,
            "train.eps" => s.train.adam.eps = num(key, value)?,
            "train.demo_steps" => s.demo_steps = num(key, value)?,
            "train.weak_hidden" => s.weak_hidden = num(key, value)?,
            "train.gate_hidden" => s.gate_hidden = num(key, value)?,

            "api.epochs" => s.api.epochs = num(key, value)?,
            "api.batch_size" => s.api.batch_size = num(key, value)?,
            "api.m_steps" => s.api.m_steps = num(key, value)?,
            "api.hidden_dim" => s.api.hidden_dim = num(key, value)?,
            "api.lr" => s.api.adam.lr = num(key, value)?,
            "api.monotone" => s.api.monotone = flag(key, value)?,
            "api.calibrate_gate" => s.api.calibrate_gate = flag(key, value)?,

            "epi.grid" => s.epi2.grid = num(key, value)?,
            "epi.slack" => s.epi2.slack = num(key, value)?,
            "epi.probe_episodes" => s.probe_episodes = num(key, value)?,
            "epi.variant" => {
                s.epi2.variant = match value {
                    "rationale" => Epi2Variant::Rationale,
                    "literal" => Epi2Variant::Literal,
                    _ => return Err(bad(key, value)),
                }
            }

            "sweep.methods" => {
                s.methods = value
                    .split(',')
                    .map(|m| m.trim())
                    .filter(|m| !m.is_empty())
                    .map(|m| Method::parse(m).map_err(|_| bad(key, m)))
                    .collect::<Result<_>>()?
            }
            "sweep.p_full" => s.p_full = list(key, value)?,
            "sweep.l2" => s.l2 = list(key, value)?,
            "sweep.episodes" => s.n_episodes = num(key, value)?,
            "sweep.seed" => s.seed_base = num(key, value)?,

            "cost.c_gate" => s.cost.c_gate = num(key, value)?,
            "cost.c_weak_head" => s.cost.c_weak_head = num(key, value)?,
            "cost.c_full" => s.cost.c_full = num(key, value)?,
            "cost.from_model" => self.cost_from_model = flag(key, value)?,

            "run.method" => self.target.method = Method::parse(value).map_err(|_| bad(key, value))?,
            "run.p_full" => self.target.p_full = num(key, value)?,
            "run.l2" => self.target.l2 = num(key, value)?,
            _ => return Err(HarnessError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(HarnessError::Config(format!("oracle.temperature {} must be > 0", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.target.p_full) || !(self.target.l2 >= 0.0) {
            return Err(HarnessError::Config("run.p_full must lie in [0, 1] and run.l2 >= 0".into()));
        }
        self.sweep.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.sweep.api.validate().map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn env(&self) -> Result<Env> {
        Ok(make_env(&self.env_name, &self.env_params)?)
    }

    /// Builds the environment and solves it for the good policy.
    pub fn solve(&self) -> Result<(Env, GoodPolicy)> {
        let env = self.env()?;
        let q = oracle::solve(&env, self.tol, self.max_iters)?;
        let good = oracle::build_good_policy(q, self.temperature)?;
        Ok((env, good))
    }

    /// Sweep settings with the cost model resolved against `env`.
    pub fn settings(&self, env: &Env) -> Result<SweepSettings> {
        let mut s = self.sweep.clone();
        if self.cost_from_model {
            let spec = api::model_spec(env, s.api.hidden_dim, 0);
            s.cost = CostModel::from_model(&spec, 1, 0, s.cost.c_full)?;
        }
        if !s.cost.gating_pays_off() {
            log::warn!(
                "c_full {} does not exceed c_gate + c_weak_head {}; gating cannot save cost",
                s.cost.c_full,
                s.cost.c_gate + s.cost.c_weak_head
            );
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let cfg = Config::parse(
            "# comment\nenv.name = corridor_catch\nenv.drops = 2 # trailing\n\nsweep.p_full = 0.1, 0.5\nsweep.methods = api,random\napi.monotone = false\n",
        )
        .unwrap();
        assert_eq!(cfg.env_name, "corridor_catch");
        assert_eq!(cfg.env_params.get("drops").map(String::as_str), Some("2"));
        assert_eq!(cfg.sweep.p_full, vec![0.1, 0.5]);
        assert_eq!(cfg.sweep.methods, vec![Method::Api, Method::Random]);
        assert!(!cfg.sweep.api.monotone);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let e = Config::parse("train.momentum = 0.9\n").unwrap_err();
        assert!(e.to_string().contains("unknown key"), "{e}");
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(Config::parse("nosection = 1\n").is_err());
        assert!(Config::parse("env.name grid_nav\n").is_err());
        assert!(Config::parse("sweep.seed = 1\nsweep.seed = 2\n").is_err());
        assert!(Config::parse("sweep.episodes = many\n").is_err());
        assert!(Config::parse("sweep.p_full = 1.5\n").is_err());
    }

    #[test]
    fn unknown_env_parameter_surfaces_on_build() {
        let cfg = Config::parse("env.colour = red\n").unwrap();
        assert!(cfg.env().is_err());
    }

    #[test]
    fn cost_from_model_uses_mac_counts() {
        let cfg = Config::parse("cost.from_model = true\n").unwrap();
        let env = cfg.env().unwrap();
        let s = cfg.settings(&env).unwrap();
        assert!(s.cost.c_gate < 1.0 && s.cost.c_weak_head < 1.0);
        assert_eq!(s.cost.c_full, 132.0);
    }
}

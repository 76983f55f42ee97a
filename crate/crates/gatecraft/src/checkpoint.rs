//! Versioned text checkpoints.
//!
//! The first line is the magic `GATECRAFT-CKPT v1`; after it come `[section]`
//! headers with `key = value` lines. Floats are written with 17 significant
//! digits, which round-trips every finite `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use gatecraft_core::api::ApiBundle;
use gatecraft_core::approx::{HeadKind, HeadSpec, Model, ModelSpec, ParameterVector};
use gatecraft_core::env::{make_env, Env, EnvParams};
use gatecraft_core::epi::{Epi2Variant, EpiBundle, EpiRule};
use gatecraft_core::oracle::{build_good_policy, GoodPolicy, QTable};
use gatecraft_core::runtime::{CostModel, Router};

use crate::error::{HarnessError, Result};

pub const MAGIC: &str = "GATECRAFT-CKPT v1";

/// A trained gate and weak policy, ready to deploy.
#[derive(Debug, Clone, PartialEq)]
pub enum Bundle {
    Epi(EpiBundle),
    Api(ApiBundle),
}

impl Bundle {
    pub fn into_router(self) -> Router {
        match self {
            Bundle::Epi(b) => Router::Epi(b),
            Bundle::Api(b) => Router::Api(b),
        }
    }

    pub fn p_full_target(&self) -> f64 {
        match self {
            Bundle::Epi(b) => b.p_full_target,
            Bundle::Api(b) => b.p_full_target,
        }
    }
}

/// Everything needed to rebuild a composite policy without retraining.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub env_name: String,
    pub env_params: EnvParams,
    pub temperature: f64,
    pub q: QTable,
    pub cost: CostModel,
    pub l2: f64,
    pub bundle: Option<Bundle>,
}

impl Checkpoint {
    pub fn new(env: &Env, good: &GoodPolicy, cost: CostModel) -> Self {
        Self {
            env_name: env.spec().name.clone(),
            env_params: env.params(),
            temperature: good.temperature(),
            q: good.q_table().clone(),
            cost,
            l2: 0.0,
            bundle: None,
        }
    }

    pub fn env(&self) -> Result<Env> {
        Ok(make_env(&self.env_name, &self.env_params)?)
    }

    pub fn good(&self) -> Result<GoodPolicy> {
        Ok(build_good_policy(self.q.clone(), self.temperature)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut w = Writer::default();
        w.out.push_str(MAGIC);
        w.out.push('\n');
        w.section("env");
        w.kv("name", &self.env_name);
        for (k, v) in &self.env_params {
            w.kv(&format!("param.{k}"), v);
        }
        w.section("oracle");
        w.float("temperature", self.temperature);
        w.kv("n_states", &self.q.n_states().to_string());
        w.kv("n_actions", &self.q.n_actions().to_string());
        w.floats("q", self.q.values());
        w.section("cost");
        w.float("c_gate", self.cost.c_gate);
        w.float("c_weak_head", self.cost.c_weak_head);
        w.float("c_full", self.cost.c_full);
        match &self.bundle {
            None => {}
            Some(Bundle::Epi(b)) => {
                w.section("epi");
                w.float("p_full_target", b.p_full_target);
                w.float("l2", self.l2);
                match b.rule {
                    EpiRule::Epi1 { t1 } => {
                        w.kv("rule", "epi1");
                        w.float("t1", t1);
                    }
                    EpiRule::Epi2 { t1, t2, variant } => {
                        w.kv("rule", "epi2");
                        w.float("t1", t1);
                        w.float("t2", t2);
                        w.kv("variant", variant_name(variant));
                    }
                }
                w.model("model.g_tilde", &b.g_tilde);
                w.model("model.pi1", &b.pi1);
            }
            Some(Bundle::Api(b)) => {
                w.section("api");
                w.float("p_full_target", b.p_full_target);
                w.float("l2", self.l2);
                w.float("gate_offset", b.gate_offset);
                w.model("model.api", &b.model);
            }
        }
        w.out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc = Document::parse(text)?;
        let env = doc.section("env")?;
        let mut env_params = EnvParams::new();
        for (k, v) in &env.entries {
            if let Some(p) = k.strip_prefix("param.") {
                env_params.insert(p.to_string(), v.clone());
            }
        }
        let oracle = doc.section("oracle")?;
        let q = QTable::from_values(oracle.parse("n_states")?, oracle.parse("n_actions")?, oracle.floats("q")?)?;
        let cost = doc.section("cost")?;
        let cost = CostModel::new(cost.float("c_gate")?, cost.float("c_weak_head")?, cost.float("c_full")?)?;
        let mut ckpt = Checkpoint {
            env_name: env.get("name")?.to_string(),
            env_params,
            temperature: oracle.float("temperature")?,
            q,
            cost,
            l2: 0.0,
            bundle: None,
        };
        if let Ok(s) = doc.section("epi") {
            let t1 = s.float("t1")?;
            let rule = match s.get("rule")? {
                "epi1" => EpiRule::Epi1 { t1 },
                "epi2" => EpiRule::Epi2 { t1, t2: s.float("t2")?, variant: parse_variant(s.get("variant")?)? },
                other => return Err(HarnessError::Checkpoint(format!("unknown rule `{other}`"))),
            };
            ckpt.l2 = s.float("l2")?;
            ckpt.bundle = Some(Bundle::Epi(EpiBundle {
                g_tilde: doc.model("model.g_tilde")?,
                pi1: doc.model("model.pi1")?,
                rule,
                p_full_target: s.float("p_full_target")?,
            }));
        } else if let Ok(s) = doc.section("api") {
            ckpt.l2 = s.float("l2")?;
            ckpt.bundle = Some(Bundle::Api(ApiBundle {
                model: doc.model("model.api")?,
                gate_offset: s.float("gate_offset")?,
                p_full_target: s.float("p_full_target")?,
                history: Vec::new(),
                warnings: Vec::new(),
            }));
        }
        Ok(ckpt)
    }
}

fn variant_name(v: Epi2Variant) -> &'static str {
    match v {
        Epi2Variant::Rationale => "rationale",
        Epi2Variant::Literal => "literal",
    }
}

fn parse_variant(s: &str) -> Result<Epi2Variant> {
    match s {
        "rationale" => Ok(Epi2Variant::Rationale),
        "literal" => Ok(Epi2Variant::Literal),
        _ => Err(HarnessError::Checkpoint(format!("unknown variant `{s}`"))),
    }
}

fn head_name(k: HeadKind) -> &'static str {
    match k {
        HeadKind::Softmax => "softmax",
        HeadKind::Scalar => "scalar",
        HeadKind::Logit => "logit",
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Default)]
struct Writer {
    out: String,
}

impl Writer {
    fn section(&mut self, name: &str) {
        let _ = writeln!(self.out, "[{name}]");
    }

    fn kv(&mut self, k: &str, v: &str) {
        let _ = writeln!(self.out, "{k} = {v}");
    }

    fn float(&mut self, k: &str, v: f64) {
        self.kv(k, &fmt_f64(v));
    }

    fn floats(&mut self, k: &str, v: &[f64]) {
        let parts: Vec<String> = v.iter().map(|&x| fmt_f64(x)).collect();
        self.kv(k, &parts.join(" "));
    }

    fn model(&mut self, name: &str, m: &Model) {
        self.section(name);
        self.kv("input_dim", &m.spec.input_dim.to_string());
        self.kv("hidden_dim", &m.spec.hidden_dim.to_string());
        let heads: Vec<String> = m.spec.heads.iter().map(|h| format!("{}:{}", head_name(h.kind), h.dim)).collect();
        self.kv("heads", &heads.join(","));
        self.kv("init_seed", &m.spec.init_seed.to_string());
        self.floats("params", m.params.as_slice());
    }
}

struct Section {
    name: String,
    entries: Vec<(String, String)>,
}

impl Section {
    fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| HarnessError::Checkpoint(format!("[{}] is missing `{key}`", self.name)))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse().map_err(|_| HarnessError::Checkpoint(format!("[{}] {key}: cannot parse `{v}`", self.name)))
    }

    fn float(&self, key: &str) -> Result<f64> {
        self.parse(key)
    }

    fn floats(&self, key: &str) -> Result<Vec<f64>> {
        self.get(key)?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| HarnessError::Checkpoint(format!("[{}] {key}: bad float `{t}`", self.name))))
            .collect()
    }
}

struct Document {
    sections: Vec<Section>,
}

impl Document {
    fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(l) if l.trim_end() == MAGIC => {}
            Some(l) => return Err(HarnessError::Checkpoint(format!("bad magic line `{l}`"))),
            None => return Err(HarnessError::Checkpoint("empty file".into())),
        }
        let mut sections: Vec<Section> = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                sections.push(Section { name: name.to_string(), entries: Vec::new() });
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Checkpoint(format!("line {}: expected `key = value`", n + 2)))?;
            let s = sections
                .last_mut()
                .ok_or_else(|| HarnessError::Checkpoint(format!("line {}: entry before any section", n + 2)))?;
            s.entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self { sections })
    }

    fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| HarnessError::Checkpoint(format!("missing section [{name}]")))
    }

    fn model(&self, name: &str) -> Result<Model> {
        let s = self.section(name)?;
        let heads = s
            .get("heads")?
            .split(',')
            .map(|h| {
                let (kind, dim) = h.split_once(':').ok_or_else(|| HarnessError::Checkpoint(format!("bad head `{h}`")))?;
                let kind = match kind {
                    "softmax" => HeadKind::Softmax,
                    "scalar" => HeadKind::Scalar,
                    "logit" => HeadKind::Logit,
                    _ => return Err(HarnessError::Checkpoint(format!("unknown head kind `{kind}`"))),
                };
                let dim = dim.parse().map_err(|_| HarnessError::Checkpoint(format!("bad head `{h}`")))?;
                Ok(HeadSpec { kind, dim })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = ModelSpec {
            input_dim: s.parse("input_dim")?,
            hidden_dim: s.parse("hidden_dim")?,
            heads,
            init_seed: s.parse("init_seed")?,
        };
        Ok(Model::new(spec, ParameterVector(s.floats("params")?))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips_awkward_values() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 5e-324, f64::MAX, f64::MIN_POSITIVE, -0.0, 123456789.12345679] {
            let back: f64 = fmt_f64(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x}");
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(Checkpoint::from_text("GATECRAFT-CKPT v2\n").is_err());
        assert!(Checkpoint::from_text("").is_err());
    }
}

//! What each CLI subcommand does, callable without a process boundary.

use std::path::{Path, PathBuf};

use gatecraft_core::api::{self, ApiConfig};
use gatecraft_core::epi::{self, EpiBundle, EpiRule};
use gatecraft_core::oracle;
use gatecraft_core::rng::SplitMix64;
use gatecraft_core::runtime::{
    best_over_l2, calibrate_epi2_by_probe, train_weak_models, CompositePolicy, EvaluationReport, Method, ReportMeta,
};

use crate::checkpoint::{Bundle, Checkpoint};
use crate::config::Config;
use crate::error::{HarnessError, Result};
use crate::{parallel, report};

pub const ORACLE_CKPT: &str = "oracle.ckpt";
pub const EPI_CKPT: &str = "epi.ckpt";
pub const API_CKPT: &str = "api.ckpt";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

pub fn train_oracle(cfg: &Config, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let (env, good) = cfg.solve()?;
    let settings = cfg.settings(&env)?;
    let path = out.join(ORACLE_CKPT);
    Checkpoint::new(&env, &good, settings.cost).save(&path)?;
    log::info!("{}: {} states, {} actions", env.spec().name, env.n_states(), env.n_actions());
    Ok(path)
}

/// Trains the entropy regressor and imitation policy, then calibrates the
/// rule named by `run.method` (`epi1` or `epi2`) at `run.p_full`.
pub fn train_epi(cfg: &Config, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let (env, good) = cfg.solve()?;
    let settings = cfg.settings(&env)?;
    let t = cfg.target;
    let demos = oracle::demonstrations(&env, &good, settings.demo_steps, settings.demo_seed())?;
    let weak = train_weak_models(&env, &demos, &settings, t.l2)?;
    let rule = match t.method {
        Method::Epi1 => EpiRule::Epi1 { t1: epi::calibrate_epi1(&weak.samples, t.p_full)? },
        Method::Epi2 => {
            let cal = calibrate_epi2_by_probe(&env, &good, &weak, &settings, t.p_full)?;
            report::write_calibration(&cal.rows, &out.join("epi_calibration.csv"))?;
            if !cal.feasible {
                log::warn!("no EPI-2 threshold pair met p_full {} within slack; kept the closest", t.p_full);
            }
            EpiRule::Epi2 { t1: cal.t1, t2: cal.t2, variant: settings.epi2.variant }
        }
        other => return Err(HarnessError::Config(format!("train-epi needs run.method epi1 or epi2, not {}", other.name()))),
    };
    let mut ckpt = Checkpoint::new(&env, &good, settings.cost);
    ckpt.l2 = t.l2;
    ckpt.bundle = Some(Bundle::Epi(EpiBundle { g_tilde: weak.g_tilde, pi1: weak.pi1, rule, p_full_target: t.p_full }));
    let path = out.join(EPI_CKPT);
    ckpt.save(&path)?;
    Ok(path)
}

pub fn train_api(cfg: &Config, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let (env, good) = cfg.solve()?;
    let settings = cfg.settings(&env)?;
    let t = cfg.target;
    let api_cfg = ApiConfig { p_full: t.p_full, l2_lambda: t.l2, ..settings.api };
    let seed = SplitMix64::stream(settings.seed_base, 10).next_u64();
    let bundle = api::run_api(&env, &good, &api_cfg, seed)?;
    for w in &bundle.warnings {
        log::warn!("{w}");
    }
    report::write_history(&bundle.history, &out.join("api_history.csv"))?;
    let mut ckpt = Checkpoint::new(&env, &good, settings.cost);
    ckpt.l2 = t.l2;
    ckpt.bundle = Some(Bundle::Api(bundle));
    let path = out.join(API_CKPT);
    ckpt.save(&path)?;
    Ok(path)
}

/// Evaluates a checkpoint: the composite if it holds a bundle, otherwise
/// the good policy alone. Episode count and seeds come from `cfg`.
pub fn eval(cfg: &Config, checkpoint: &Path, out: &Path) -> Result<EvaluationReport> {
    ensure_dir(out)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let env = ckpt.env()?;
    let good = ckpt.good()?;
    let s = &cfg.sweep;
    let mut meta = ReportMeta {
        method: "good".into(),
        env: env.spec().name.clone(),
        p_full_target: 1.0,
        l2_lambda: ckpt.l2,
        seed_base: s.seed_base,
    };
    let report = match ckpt.bundle.clone() {
        None => parallel::evaluate_plain(&env, &good, s.n_episodes, &ckpt.cost, meta)?.0,
        Some(bundle) => {
            meta.method = match &bundle {
                Bundle::Epi(b) => match b.rule {
                    EpiRule::Epi1 { .. } => "epi1",
                    EpiRule::Epi2 { .. } => "epi2",
                },
                Bundle::Api(_) => "api",
            }
            .into();
            meta.p_full_target = bundle.p_full_target();
            let composite = CompositePolicy::new(&good, bundle.into_router(), ckpt.cost)?;
            parallel::evaluate_composite(&env, &composite, s.n_episodes, meta)?.0
        }
    };
    report::report(std::slice::from_ref(&report), out, "eval")?;
    Ok(report)
}

/// Outputs of a sweep: every successful row plus the best-l2 selection.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<EvaluationReport>,
    pub best: Vec<EvaluationReport>,
    pub failures: usize,
}

/// Writes `sweep.csv`/`sweep.txt` (all rows), `best.csv`/`best.txt`, and
/// `failures.csv` when any cell failed.
pub fn sweep(cfg: &Config, out: &Path) -> Result<SweepOutput> {
    ensure_dir(out)?;
    let (env, good) = cfg.solve()?;
    let settings = cfg.settings(&env)?;
    let rows = parallel::sweep(&env, &good, &settings)?;
    let ok: Vec<EvaluationReport> = rows.iter().filter_map(|r| r.result.as_ref().ok().cloned()).collect();
    let failures = rows.len() - ok.len();
    if failures > 0 {
        report::write_failures(&rows, &out.join("failures.csv"))?;
    }
    if ok.is_empty() {
        return Err(HarnessError::Config("every sweep cell failed; see failures.csv".into()));
    }
    let best = best_over_l2(&ok);
    report::report(&ok, out, "sweep")?;
    report::report(&best, out, "best")?;
    Ok(SweepOutput { rows: ok, best, failures })
}

/// Re-renders a report CSV into `<out>/report.csv` and `<out>/report.txt`.
pub fn report_from_csv(input: &Path, out: &Path) -> Result<Vec<EvaluationReport>> {
    ensure_dir(out)?;
    let rows = report::read_csv(input)?;
    report::report(&rows, out, "report")?;
    Ok(rows)
}

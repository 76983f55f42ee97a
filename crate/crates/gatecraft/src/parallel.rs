//! Rayon fan-out for evaluation and sweeps. Each episode or sweep cell
//! owns its own state and seed; results are collected in index order, so
//! output does not depend on the number of worker threads.

use gatecraft_core::env::Env;
use gatecraft_core::oracle::{self, GoodPolicy};
use gatecraft_core::runtime::{
    composite_episode, jobs, plain_episode, run_job, summarize_composite, summarize_plain, train_weak_models, CompositePolicy,
    CostModel, EpisodeOutcome, EvaluationReport, ReportMeta, SweepRow, SweepSettings,
};
use gatecraft_core::dist::Policy;
use gatecraft_core::Result;
use rayon::prelude::*;

pub fn evaluate_composite(
    env: &Env,
    composite: &CompositePolicy<'_>,
    n_episodes: usize,
    meta: ReportMeta,
) -> Result<(EvaluationReport, Vec<EpisodeOutcome>)> {
    let outcomes = (0..n_episodes as u64)
        .into_par_iter()
        .map(|i| {
            let mut c = composite.clone();
            composite_episode(env, &mut c, meta.seed_base.wrapping_add(i)).map(|(_, o)| o)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize_composite(meta, &outcomes, &composite.cost_model)?, outcomes))
}

pub fn evaluate_plain<P: Policy + Sync>(
    env: &Env,
    policy: &P,
    n_episodes: usize,
    cost: &CostModel,
    meta: ReportMeta,
) -> Result<(EvaluationReport, Vec<EpisodeOutcome>)> {
    let outcomes = (0..n_episodes as u64)
        .into_par_iter()
        .map(|i| plain_episode(env, policy, meta.seed_base.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize_plain(meta, &outcomes, policy.cost_tag(), cost)?, outcomes))
}

/// Same rows, in the same order, as the sequential core sweep.
pub fn sweep(env: &Env, good: &GoodPolicy, settings: &SweepSettings) -> Result<Vec<SweepRow>> {
    settings.validate()?;
    let demos = oracle::demonstrations(env, good, settings.demo_steps, settings.demo_seed())?;
    let weak: Vec<_> = settings.l2.par_iter().map(|&l2| train_weak_models(env, &demos, settings, l2)).collect();
    let rows = jobs(settings)
        .into_par_iter()
        .map(|job| {
            let idx = settings.l2.iter().position(|&l| l.to_bits() == job.l2.to_bits()).unwrap_or(0);
            let result = match &weak[idx] {
                Ok(w) => run_job(env, good, w, settings, &job),
                Err(e) => Err(e.clone()),
            };
            if let Err(e) = &result {
                log::warn!("{} p_full={} l2={}: {e}", job.method.name(), job.p_full, job.l2);
            }
            SweepRow { job, result: result.map_err(|e| e.to_string()) }
        })
        .collect();
    Ok(rows)
}

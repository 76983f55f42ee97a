use gatecraft::checkpoint::{Bundle, Checkpoint};
use gatecraft::commands;
use gatecraft::config::Config;
use gatecraft::report::{parse_csv, to_csv_string};
use gatecraft_core::runtime::{CompositePolicy, EvaluationReport};
use proptest::prelude::*;

const SMALL: &str = "
env.name = grid_nav
env.width = 4
env.height = 3
env.goal = 3:2
env.pits = 1:1
oracle.temperature = 0.05
train.iterations = 300
train.lr = 0.01
train.demo_steps = 400
api.epochs = 5
api.batch_size = 200
api.m_steps = 5
epi.probe_episodes = 2
epi.grid = 4
sweep.episodes = 4
run.p_full = 0.3
";

fn config(extra: &str) -> Config {
    Config::parse(&format!("{SMALL}{extra}")).unwrap()
}

#[test]
fn epi_checkpoint_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = commands::train_epi(&config("run.method = epi2\n"), dir.path()).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("GATECRAFT-CKPT v1\n"));
    let ckpt = Checkpoint::load(&path).unwrap();
    assert!(matches!(ckpt.bundle, Some(Bundle::Epi(_))));
    assert_eq!(Checkpoint::from_text(&ckpt.to_text()).unwrap(), ckpt);
    assert_eq!(ckpt.to_text(), text);
    assert!(dir.path().join("epi_calibration.csv").exists());
}

#[test]
fn api_checkpoint_reloads_to_the_same_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("run.method = api\n");
    let path = commands::train_api(&cfg, dir.path()).unwrap();
    let ckpt = Checkpoint::load(&path).unwrap();
    let again = Checkpoint::from_text(&ckpt.to_text()).unwrap();
    assert_eq!(again, ckpt);

    // Same checkpoint evaluated twice gives identical reports.
    let a = commands::eval(&cfg, &path, dir.path()).unwrap();
    let b = commands::eval(&cfg, &path, dir.path()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.method, "api");
    let history = std::fs::read_to_string(dir.path().join("api_history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,loss,mean_q,beta"));
    assert_eq!(history.lines().count(), 6);
}

#[test]
fn reloaded_good_policy_matches_the_solved_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("");
    let path = commands::train_oracle(&cfg, dir.path()).unwrap();
    let ckpt = Checkpoint::load(&path).unwrap();
    let (env, good) = cfg.solve().unwrap();
    assert_eq!(ckpt.env().unwrap().params(), env.params());
    let reloaded = ckpt.good().unwrap();
    for s in 0..env.n_states() {
        assert_eq!(reloaded.at(s), good.at(s));
    }
    let r = commands::eval(&cfg, &path, dir.path()).unwrap();
    assert_eq!(r.method, "good");
    assert_eq!(r.realized_fraction_good, 1.0);
    assert_eq!(r.speedup, 1.0);
}

#[test]
fn parallel_evaluation_matches_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("run.method = epi1\n");
    let path = commands::train_epi(&cfg, dir.path()).unwrap();
    let ckpt = Checkpoint::load(&path).unwrap();
    let env = ckpt.env().unwrap();
    let good = ckpt.good().unwrap();
    let router = ckpt.bundle.clone().unwrap().into_router();
    let meta = gatecraft_core::runtime::ReportMeta {
        method: "epi1".into(),
        env: env.spec().name.clone(),
        p_full_target: 0.3,
        l2_lambda: 0.0,
        seed_base: 77,
    };
    let mut seq = CompositePolicy::new(&good, router.clone(), ckpt.cost).unwrap();
    let a = gatecraft_core::runtime::evaluate_composite(&env, &mut seq, 12, meta.clone()).unwrap();
    let par = CompositePolicy::new(&good, router, ckpt.cost).unwrap();
    let b = gatecraft::parallel::evaluate_composite(&env, &par, 12, meta).unwrap();
    assert_eq!(a, b);
}

#[test]
fn parallel_sweep_matches_core_sweep() {
    let cfg = config("sweep.methods = epi1,random,naive\nsweep.p_full = 0.2,0.6\nsweep.l2 = 0,0.001\n");
    let (env, good) = cfg.solve().unwrap();
    let s = cfg.settings(&env).unwrap();
    let seq = gatecraft_core::runtime::sweep(&env, &good, &s).unwrap();
    let par = gatecraft::parallel::sweep(&env, &good, &s).unwrap();
    assert_eq!(seq, par);
    assert_eq!(par.len(), 1 + 2 * (1 + 3 * 2));
}

#[test]
fn sweep_writes_reports_and_is_byte_identical_across_runs() {
    let cfg = config("sweep.methods = epi1,random\nsweep.p_full = 0.2\nsweep.l2 = 0\n");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = commands::sweep(&cfg, a.path()).unwrap();
    commands::sweep(&cfg, b.path()).unwrap();
    assert_eq!(out.failures, 0);
    for f in ["sweep.csv", "sweep.txt", "best.csv", "best.txt"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let rows = gatecraft::report::read_csv(&a.path().join("sweep.csv")).unwrap();
    assert_eq!(rows, out.rows);
}

fn report_strategy() -> impl Strategy<Value = EvaluationReport> {
    (
        prop::sample::select(vec!["api", "epi2", "random"]),
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
        0.0f64..1.0,
        prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
        1usize..1000,
        any::<u64>(),
    )
        .prop_map(|(m, score, f, sd, n, seed)| EvaluationReport {
            method: m.into(),
            env: "corridor_catch".into(),
            p_full_target: f / 3.0,
            l2_lambda: 1e-5,
            realized_fraction_good: f,
            mean_score: score,
            score_stddev: sd,
            n_episodes: n,
            avg_cost: 20.0 + 112.0 * f,
            speedup: 132.0 / (20.0 + 112.0 * f),
            seed_base: seed,
        })
}

proptest! {
    #[test]
    fn csv_round_trip_is_bit_exact(rows in prop::collection::vec(report_strategy(), 1..8)) {
        let text = to_csv_string(&rows).unwrap();
        let back = parse_csv(text.as_bytes()).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            for (x, y) in [
                (a.p_full_target, b.p_full_target),
                (a.realized_fraction_good, b.realized_fraction_good),
                (a.mean_score, b.mean_score),
                (a.score_stddev, b.score_stddev),
                (a.avg_cost, b.avg_cost),
                (a.speedup, b.speedup),
                (a.l2_lambda, b.l2_lambda),
            ] {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
            prop_assert_eq!(a.seed_base, b.seed_base);
            prop_assert_eq!(a.n_episodes, b.n_episodes);
        }
    }
}

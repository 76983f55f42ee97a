use std::path::Path;
use std::process::Command;

fn gatecraft(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_gatecraft"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

const SMALL: &str = "env.name = grid_nav\nenv.width = 4\nenv.height = 3\nenv.goal = 3:2\noracle.temperature = 0.05\n\
train.iterations = 200\ntrain.demo_steps = 300\napi.epochs = 3\napi.batch_size = 100\napi.m_steps = 3\n\
epi.probe_episodes = 2\nepi.grid = 3\nsweep.episodes = 3\nsweep.methods = epi1,random\nsweep.p_full = 0.3\nsweep.l2 = 0\n";

#[test]
fn train_eval_and_report_succeed() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), SMALL).unwrap();
    let (code, stdout, stderr) = gatecraft(dir.path(), &["--config", "run.cfg", "--out", "o", "train-api"]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.trim().ends_with("api.ckpt"));
    let (code, stdout, stderr) = gatecraft(dir.path(), &["--config", "run.cfg", "--out", "o", "eval", "--checkpoint", "o/api.ckpt"]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("api"));
    let (code, _, stderr) = gatecraft(dir.path(), &["--config", "run.cfg", "--seed", "5", "--out", "s", "sweep"]);
    assert_eq!(code, 0, "{stderr}");
    let csv = std::fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",5")), "{csv}");
    let (code, stdout, stderr) = gatecraft(dir.path(), &["--out", "r", "report", "--input", "s/sweep.csv"]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.lines().next().unwrap().ends_with("best"));
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "sweep.colour = blue\n").unwrap();
    let (code, _, stderr) = gatecraft(dir.path(), &["--config", "bad.cfg", "train-oracle"]);
    assert_eq!(code, 1);
    assert!(stderr.contains("unknown key"), "{stderr}");
    let (code, _, _) = gatecraft(dir.path(), &["no-such-command"]);
    assert_eq!(code, 1);
}

#[test]
fn divergence_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}train.lr = 1e308\nrun.method = epi1\n");
    std::fs::write(dir.path().join("run.cfg"), cfg).unwrap();
    let (code, _, stderr) = gatecraft(dir.path(), &["--config", "run.cfg", "train-epi"]);
    assert_eq!(code, 2, "{stderr}");
}

#[test]
fn io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = gatecraft(dir.path(), &["--config", "missing.cfg", "train-oracle"]);
    assert_eq!(code, 3);
    let (code, _, _) = gatecraft(dir.path(), &["eval", "--checkpoint", "missing.ckpt"]);
    assert_eq!(code, 3);
}

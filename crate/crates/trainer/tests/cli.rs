use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
[train]
num_envs = 8
total_env_steps = 256
batch_size = 32
log_interval = 64
buffer_capacity = 64

[agent]
actor_hidden = [16]
critic_hidden = [16]
n_atoms = 11
";

fn fastrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastrl")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY).unwrap();
    path
}

fn trained_run(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let config = write_config(dir);
    let run = dir.join(name);
    let mut args = vec![
        "train",
        "--config",
        config.to_str().unwrap(),
        "--run-dir",
        run.to_str().unwrap(),
    ];
    for e in extra {
        args.extend(["--set", e]);
    }
    let o = fastrl(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    run
}

#[test]
fn train_writes_run_directory_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let run = trained_run(dir.path(), "run", &["train.seed=3"]);
    for f in [
        "config.toml",
        "metrics.csv",
        "timing.csv",
        "summary.json",
        "checkpoints/latest.frlc",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["env_steps"], 256);
    let cfg = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(cfg.contains("seed = 3"));
}

#[test]
fn train_rejects_unknown_keys_and_bad_values() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let c = config.to_str().unwrap();
    for bad in [
        "train.no_such_key=1",
        "agent.gamma=1.5",
        "train.eval_episodes=0",
        "train.algorithm=ppo",
    ] {
        let o = fastrl(&[
            "train",
            "--config",
            c,
            "--set",
            bad,
            "--run-dir",
            dir.path().join("x").to_str().unwrap(),
        ]);
        assert!(!o.status.success(), "{bad} accepted");
        assert!(stderr(&o).starts_with("error:"), "{bad}: {}", stderr(&o));
    }
}

#[test]
fn resume_continues_to_a_larger_budget() {
    let dir = tempfile::tempdir().unwrap();
    let run = trained_run(dir.path(), "run", &[]);
    let o = fastrl(&[
        "train",
        "--resume",
        "--run-dir",
        run.to_str().unwrap(),
        "--set",
        "train.total_env_steps=512",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["env_steps"], 512);
}

#[test]
fn eval_prints_statistics_and_rejects_zero_episodes() {
    let dir = tempfile::tempdir().unwrap();
    let run = trained_run(dir.path(), "run", &[]);
    let ck = run.join("checkpoints/latest.frlc");
    let ck = ck.to_str().unwrap();
    let a = fastrl(&[
        "eval",
        "--checkpoint",
        ck,
        "--episodes",
        "4",
        "--push-profile",
        "strong",
    ]);
    assert!(a.status.success(), "{}", stderr(&a));
    let stats: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(stats["episodes"], 4);
    let b = fastrl(&[
        "eval",
        "--checkpoint",
        ck,
        "--episodes",
        "4",
        "--push-profile",
        "strong",
    ]);
    assert_eq!(a.stdout, b.stdout);
    let z = fastrl(&["eval", "--checkpoint", ck, "--episodes", "0"]);
    assert!(!z.status.success());
}

#[test]
fn divergence_exits_with_code_two_and_keeps_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let run = dir.path().join("run");
    let o = fastrl(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--run-dir",
        run.to_str().unwrap(),
        "--set",
        "agent.actor_lr=1e30",
        "--set",
        "agent.critic_lr=1e30",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("training aborted"));
    assert!(run.join("checkpoints/latest.frlc").exists());
}

#[test]
fn sweep_writes_one_run_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("sweep");
    let o = fastrl(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--axis",
        "agent.cdq_mode=average,min_expectation",
        "--set",
        "train.total_env_steps=64",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rows = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    assert_eq!(rows.records().count(), 2);
    assert!(out.join("point_000_seed_0/metrics.csv").exists());
    assert!(out.join("point_001_seed_0/metrics.csv").exists());
}

#[test]
fn plot_exports_svg_and_long_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = trained_run(dir.path(), "a", &[]);
    let b = trained_run(dir.path(), "b", &["train.seed=1"]);
    let prefix = dir.path().join("curves");
    let o = fastrl(&[
        "plot",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        prefix.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = std::fs::read_to_string(prefix.with_extension("svg")).unwrap();
    assert!(svg.contains("<svg"));
    let mut long = csv::Reader::from_path(prefix.with_extension("csv")).unwrap();
    assert_eq!(long.headers().unwrap(), vec!["run", "env_steps", "column", "value"]);
    let runs: std::collections::BTreeSet<String> = long.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(runs.into_iter().collect::<Vec<_>>(), vec!["a", "b"]);
}

#[test]
fn plot_single_run_on_wall_clock_axis() {
    let dir = tempfile::tempdir().unwrap();
    let a = trained_run(dir.path(), "a", &[]);
    let prefix = dir.path().join("wall");
    let o = fastrl(&[
        "plot",
        a.to_str().unwrap(),
        "--x",
        "wall_clock",
        "--out",
        prefix.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(prefix.with_extension("svg").exists());
}

#[test]
fn plot_rejects_unknown_columns_and_foreign_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let a = trained_run(dir.path(), "a", &[]);
    let out = dir.path().join("p");
    let o = fastrl(&[
        "plot",
        a.to_str().unwrap(),
        "--metric",
        "no_such_metric",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!o.status.success());

    let foreign = dir.path().join("foreign");
    std::fs::create_dir_all(&foreign).unwrap();
    std::fs::write(foreign.join("metrics.csv"), "step,score\n1,2\n").unwrap();
    let o = fastrl(&[
        "plot",
        a.to_str().unwrap(),
        foreign.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error:"));
}

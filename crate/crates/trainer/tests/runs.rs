use std::path::Path;

use fastrl_envlab::PushProfile;
use fastrl_trainer::train::latest_checkpoint;
use fastrl_trainer::{evaluate, resume, sweep, train, Axis, Checkpoint, MetricsTable, RunConfig, Trainer};

fn tiny(extra: &[&str]) -> RunConfig {
    let mut overrides: Vec<String> = [
        "train.num_envs=8",
        "train.total_env_steps=512",
        "train.batch_size=32",
        "train.log_interval=64",
        "train.buffer_capacity=64",
        "agent.actor_hidden=[16]",
        "agent.critic_hidden=[16]",
        "agent.n_atoms=11",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    overrides.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::from_toml("", &overrides).unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

/// Equal in every section; only the wall-clock counter may differ.
fn same_state(a: &Checkpoint, b: &Checkpoint) -> bool {
    let names = |c: &Checkpoint| c.sections.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    names(a) == names(b)
        && a.sections.iter().zip(&b.sections).all(|((n, x), (_, y))| {
            if n == "COUNTERS" {
                let strip = |bytes: &[u8]| {
                    let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
                    v["elapsed_s"] = serde_json::Value::Null;
                    v
                };
                strip(x) == strip(y)
            } else {
                x == y
            }
        })
}

#[test]
fn zero_budget_writes_initial_checkpoint_and_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let s = train(tiny(&["train.total_env_steps=0"]), dir.path()).unwrap();
    assert_eq!((s.env_steps, s.grad_steps), (0, 0));
    let text = String::from_utf8(read(&dir.path().join("metrics.csv"))).unwrap();
    assert_eq!(text.lines().count(), 1);
    let ck = Checkpoint::load(&latest_checkpoint(dir.path())).unwrap();
    let fresh = Trainer::new(tiny(&["train.total_env_steps=0"]))
        .unwrap()
        .checkpoint()
        .unwrap();
    assert!(same_state(&ck, &fresh));
}

#[test]
fn repeated_runs_are_byte_identical() {
    for algo in ["fastsac", "fasttd3"] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let set = format!("train.algorithm={algo}");
        train(tiny(&[&set]), a.path()).unwrap();
        train(tiny(&[&set]), b.path()).unwrap();
        assert_eq!(
            read(&a.path().join("metrics.csv")),
            read(&b.path().join("metrics.csv")),
            "{algo}"
        );
        let (ca, cb) = (
            Checkpoint::load(&latest_checkpoint(a.path())).unwrap(),
            Checkpoint::load(&latest_checkpoint(b.path())).unwrap(),
        );
        assert!(same_state(&ca, &cb), "{algo}");
    }
}

#[test]
fn logged_rows_follow_the_interval_without_a_partial_tail() {
    let dir = tempfile::tempdir().unwrap();
    train(tiny(&["train.total_env_steps=500"]), dir.path()).unwrap();
    let table = MetricsTable::read(&dir.path().join("metrics.csv")).unwrap();
    let steps: Vec<f64> = table
        .column("env_steps")
        .unwrap()
        .into_iter()
        .map(Option::unwrap)
        .collect();
    assert_eq!(steps, (1..=7).map(|k| (64 * k) as f64).collect::<Vec<_>>());
}

#[test]
fn resume_matches_uninterrupted_run() {
    for algo in ["fastsac", "fasttd3"] {
        let set = format!("train.algorithm={algo}");
        let (full, split) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        train(tiny(&[&set]), full.path()).unwrap();
        train(tiny(&[&set, "train.total_env_steps=192"]), split.path()).unwrap();
        let s = resume(split.path(), &["train.total_env_steps=512".into()]).unwrap();
        assert_eq!(s.env_steps, 512);
        assert_eq!(
            read(&full.path().join("metrics.csv")),
            read(&split.path().join("metrics.csv")),
            "{algo}"
        );
        let a = Checkpoint::load(&latest_checkpoint(full.path())).unwrap();
        let b = Checkpoint::load(&latest_checkpoint(split.path())).unwrap();
        assert!(same_state(&a, &b), "{algo}");
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    for algo in ["fastsac", "fasttd3"] {
        let dir = tempfile::tempdir().unwrap();
        let set = format!("train.algorithm={algo}");
        train(tiny(&[&set, "train.total_env_steps=256"]), dir.path()).unwrap();
        let bytes = read(&latest_checkpoint(dir.path()));
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        let again = Trainer::from_checkpoint(&ck, None)
            .unwrap()
            .checkpoint()
            .unwrap()
            .to_bytes();
        assert_eq!(bytes, again, "{algo}");
    }
}

#[test]
fn evaluation_is_deterministic_and_needs_episodes() {
    let dir = tempfile::tempdir().unwrap();
    train(tiny(&["train.total_env_steps=256"]), dir.path()).unwrap();
    let ck = Checkpoint::load(&latest_checkpoint(dir.path())).unwrap();
    let t = Trainer::from_checkpoint(&ck, None).unwrap();
    let cfg = t.config().clone();
    let run = |n| evaluate(&cfg, t.learner(), t.normalizer(), n, PushProfile::Normal, 7);
    let (a, b) = (run(6).unwrap(), run(6).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.episodes, 6);
    assert!((a.completion_rate + a.fall_rate - 1.0).abs() < 1e-12);
    assert!(run(0).is_err());
    assert!(RunConfig::from_toml("[train]\neval_episodes = 0\n", &[]).is_err());
}

#[test]
fn untrained_policy_falls_under_strong_pushes() {
    let t = Trainer::new(RunConfig::default()).unwrap();
    let stats = evaluate(t.config(), t.learner(), t.normalizer(), 50, PushProfile::Strong, 11).unwrap();
    assert!(stats.fall_rate >= 0.5, "fall rate {}", stats.fall_rate);
}

#[test]
fn sweep_runs_each_point_and_scales_gradient_steps() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny(&["train.total_env_steps=128"]);
    let cdq: Axis = "agent.cdq_mode=average,min_expectation".parse().unwrap();
    let res = sweep(&base, &[cdq], 1, &dir.path().join("cdq")).unwrap();
    assert_eq!(res.len(), 2);
    assert!(res.iter().all(|r| r.status == "ok"), "{res:?}");
    assert!(dir.path().join("cdq/summary.csv").exists());

    let updates: Axis = "train.num_updates=1,2,4".parse().unwrap();
    let res = sweep(&base, &[updates], 1, &dir.path().join("updates")).unwrap();
    let g: Vec<u64> = res.iter().map(|r| r.grad_steps.unwrap()).collect();
    assert!(g[0] > 0);
    assert_eq!(g, vec![g[0], 2 * g[0], 4 * g[0]]);
    assert!(res.iter().all(|r| r.env_steps == Some(128)));
}

#[test]
fn sweep_records_a_failing_point_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny(&["train.total_env_steps=64"]);
    let axis: Axis = "agent.gamma=0.9,1.5".parse().unwrap();
    let res = sweep(&base, &[axis], 1, dir.path()).unwrap();
    assert_eq!(res[0].status, "ok");
    assert!(res[1].status.starts_with("error"), "{}", res[1].status);
}

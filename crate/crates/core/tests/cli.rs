use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpo-pro"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn setup(dir: &Path) {
    assert_eq!(code(&run(dir, &["gen-task", "--prompts", "4", "--responses", "4", "--out", "task.json"])), 0);
    assert_eq!(code(&run(dir, &["gen", "--task", "task.json", "--n", "80", "--out", "d.jsonl"])), 0);
}

#[test]
fn help_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
    assert_eq!(code(&run(dir.path(), &["rmab", "--help"])), 0);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    for args in [
        vec!["train", "--nope"],
        vec!["train", "--loss", "ppo", "--data", "d.jsonl", "--out", "x.json"],
        vec!["train", "--data", "d.jsonl"],
        vec!["train", "--loss", "dpo-pro", "--rho", "-1", "--data", "d.jsonl", "--out", "x.json"],
        vec!["train", "--divergence", "tv", "--data", "d.jsonl", "--out", "x.json"],
        vec!["gen", "--task", "task.json", "--n", "5", "--alpha", "1.5", "--out", "y.jsonl"],
        vec!["coeff-curve", "--rho-list", "-0.5"],
    ] {
        let out = run(dir.path(), &args);
        assert_eq!(code(&out), 1, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn boundary_labels_under_the_strict_ball_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = run(dir.path(), &["gen", "--task", "task.json", "--n", "50", "--label-mode", "hard", "--out", "h.jsonl"]);
    assert_eq!(code(&out), 0);
    let out = run(dir.path(), &["gen", "--task", "task.json", "--n", "50", "--label-mode", "voted:1", "--out", "v.jsonl"]);
    assert_eq!(code(&out), 0);
    let out = run(dir.path(), &["train", "--loss", "dpo-pro", "--data", "v.jsonl", "--out", "x.json"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("chi2_relaxed"));
    let out = run(dir.path(), &["train", "--loss", "dpo-pro", "--divergence", "chi2-relaxed", "--data", "v.jsonl", "--out", "x.json"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["train", "--data", "missing.jsonl", "--out", "x.json"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn failed_sweep_cells_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("sweep.json"),
        r#"{"methods":[{"name":"dpo","loss":{"kind":"dpo"}},
            {"name":"pro","loss":{"kind":"dpo_pro","ambiguity":{"divergence":"chi2","rho":0.1}}}],
            "noise_levels":[0.0],"seeds":[0],"task":{"prompts":4,"responses":4},"label_mode":{"voted":1},
            "dataset_size":100,"train":{"epochs":1,"batch_size":16,"learning_rate":0.05},"eval_size":50}"#,
    )
    .unwrap();
    let out = run(dir.path(), &["sweep", "--config", "sweep.json", "--out-dir", "out"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.contains(",failed,"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    std::fs::write(dir.path().join("t.json"), r#"{"loss":"drdpo","epochs":3,"batch_size":40}"#).unwrap();
    let out = run(dir.path(), &["train", "--config", "t.json", "--epochs", "1", "--data", "d.jsonl", "--out", "c.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let history = std::fs::read_to_string(dir.path().join("c.history.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&history).unwrap();
    assert_eq!(json["epochs"].as_array().unwrap().len(), 1);
    assert_eq!(json["batches_per_epoch"], 2);

    std::fs::write(dir.path().join("bad.json"), r#"{"epoch":3}"#).unwrap();
    let out = run(dir.path(), &["train", "--config", "bad.json", "--data", "d.jsonl", "--out", "c.json"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn eval_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    assert_eq!(code(&run(dir.path(), &["train", "--data", "d.jsonl", "--out", "c.json", "--epochs", "2"])), 0);
    let out = run(dir.path(), &["eval", "--checkpoint", "c.json", "--task", "task.json", "--n-eval", "100"]);
    assert_eq!(code(&out), 0);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let w = json["win_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&w));
    assert_eq!(json["n_eval"], 100);
}

#[test]
fn dsl_errors_carry_offsets() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["rmab", "gen-instance", "--arms", "3", "--budget", "1", "--out", "i.json"])), 0);
    let out = run(dir.path(), &["rmab", "whittle", "--instance", "i.json", "--reward", "s + * 2"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte 4"));
}

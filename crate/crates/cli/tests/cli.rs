use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cpm_models::checkpoint::load_checkpoint;

fn cpm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpm")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn scatter_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = cpm(&["scatter", "--seed", "4", "--out", out.to_str().unwrap(), "--check"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let rows = lines(&a.join("scatter.csv"));
    assert_eq!(rows[0], "env,policy_id,v_env,v_ncpm,v_cpm");
    assert_eq!(rows.len(), 1 + 2 * 500);
    assert_eq!(rows.iter().filter(|r| r.starts_with("fuzzy-bear,")).count(), 500);
    assert_eq!(fs::read(a.join("scatter.csv")).unwrap(), fs::read(b.join("scatter.csv")).unwrap());
    assert_eq!(lines(&a.join("scatter-results.csv"))[0], "experiment,seed,step,metric,value");
}

#[test]
fn sweep_passes_its_checks() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpm(&["sweep", "--out", dir.path().to_str().unwrap(), "--check"]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.matches("PASS").count(), 3, "{stdout}");
    let rows = lines(&dir.path().join("sweep.csv"));
    assert_eq!(rows[0], "epsilon,v_ncpm,v_cpm");
    assert_eq!(rows.len(), 1 + 1 + 100);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let unknown_key = write_config(dir.path(), "a.json", r#"{"episodes": 3, "planer": "mcts"}"#);
    assert_eq!(cpm(&["plan", "--config", &unknown_key, "--out", out]).status.code(), Some(2));
    let bad_planner = write_config(dir.path(), "b.json", r#"{"planner": {"kind": "minimax", "depth": 2}}"#);
    assert_eq!(cpm(&["plan", "--config", &bad_planner, "--out", out]).status.code(), Some(2));
    let bad_value = write_config(dir.path(), "c.json", r#"{"num_policies": 0}"#);
    assert_eq!(cpm(&["scatter", "--config", &bad_value, "--out", out]).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(cpm(&["sweep", "--config", missing.to_str().unwrap(), "--out", out]).status.code(), Some(2));
    assert_eq!(cpm(&["unknown-command"]).status.code(), Some(2));
}

#[test]
fn failed_checks_exit_with_three_only_in_check_mode() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    // The non-causal model walks into the forest, so demanding "stay home" fails.
    let config = write_config(
        dir.path(),
        "plan.json",
        r#"{"model": "exact-ncpm", "episodes": 20, "check": {"first_action": 1}}"#,
    );
    assert_eq!(cpm(&["plan", "--config", &config, "--out", out, "--check"]).status.code(), Some(3));
    assert_eq!(cpm(&["plan", "--config", &config, "--out", out]).status.code(), Some(0));
    let rows = lines(&dir.path().join("plan.csv"));
    assert_eq!(rows[0], "episode,return,planner,model_kind,seed");
    assert_eq!(rows.len(), 21);
    assert!(rows[1..].iter().all(|r| r.ends_with(",expectimax,exact-ncpm,0")));
}

#[test]
fn exact_cpm_plan_stays_home() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "plan.json",
        r#"{"model": "exact-cpm", "episodes": 50, "check": {"first_action": 1, "min_mean": 0.599999, "max_mean": 0.600001}}"#,
    );
    let o = cpm(&["plan", "--config", &config, "--out", dir.path().to_str().unwrap(), "--check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn adjust_verify_reports_deviations() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "adjust.json", r#"{"num_scms": 50}"#);
    let o = cpm(&["adjust-verify", "--config", &config, "--seed", "3", "--out", dir.path().to_str().unwrap(), "--check"]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    for name in ["backdoor", "importance_weighted", "frontdoor", "witness"] {
        assert!(stdout.contains(name), "{stdout}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("adjust-verify-summary.json")).unwrap()).unwrap();
    assert_eq!(summary["summary"]["num_scms"], 50);
}

#[test]
fn small_dyna_run_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "dyna.json",
        r#"{"runs": 2, "trajectories": 200, "train": {"batch_size": 16, "num_steps": 20, "epsilon": 0.1},
            "dyna": {"num_updates": 20, "eval_every": 10}}"#,
    );
    let o = cpm(&["dyna", "--config", &config, "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = lines(&dir.path().join("dyna.csv"));
    assert_eq!(rows[0], "step,predicted_value,real_value,run_id");
    // Steps 0, 10 and 20 for two runs of each kind.
    assert_eq!(rows.len(), 1 + 4 * 3);
    for id in ["cpm-0", "cpm-1", "ncpm-0", "ncpm-1"] {
        assert_eq!(rows.iter().filter(|r| r.ends_with(&format!(",{id}"))).count(), 3);
    }
}

#[test]
fn dyna_epsilon_mismatch_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "dyna.json", r#"{"behavior_epsilon": 0.05}"#);
    assert_eq!(cpm(&["dyna", "--config", &config, "--out", dir.path().to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn small_minipacman_run_writes_reloadable_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "pm.json",
        r#"{"seeds": 1, "data_episodes": 2, "train": {"batch_size": 4, "num_steps": 3, "epsilon": 0.1, "discount": 0.9},
            "eval_episodes": 1, "eval_max_frames": 5, "log_every": 1}"#,
    );
    let out = dir.path().join("out");
    let o = cpm(&["minipacman", "--config", &config, "--out", out.to_str().unwrap(), "--check"]);
    // One seed cannot satisfy the eight-seed requirement.
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    for kind in ["cpm", "ncpm"] {
        let model = load_checkpoint(&out.join("checkpoints").join(format!("{kind}-0"))).unwrap();
        assert_eq!(model.kind().name(), kind);
    }
    let rows = lines(&out.join("minipacman.csv"));
    assert_eq!(rows[0], "episode,return,planner,model_kind,seed");
    // One episode per kind and planner.
    assert_eq!(rows.len(), 1 + 2 * 2);
    let results = lines(&out.join("minipacman-results.csv"));
    assert!(results.iter().any(|r| r.contains("cpm/loss_total")));
}

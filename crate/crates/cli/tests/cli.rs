use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: [&str; 12] = [
    "--set",
    "hidden=[16,16]",
    "--set",
    "n-quantiles=8",
    "--set",
    "embedding-dim=8",
    "--set",
    "batch-size=32",
    "--set",
    "learning-starts=100",
    "--set",
    "eval-every=500",
];

fn oraclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oraclab")).args(args).output().expect("binary runs")
}

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--env", "riskybandit", "--total-steps", "1000", "--eval-episodes", "4"];
    args.extend(SMALL);
    args.extend(["--out-dir", out.to_str().unwrap()]);
    args.extend(extra);
    oraclab(&args)
}

fn config(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("config.json")).unwrap()).unwrap()
}

#[test]
fn train_then_eval() {
    let root = tempfile::tempdir().unwrap();
    let out = train(root.path(), &["--agent", "orac", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = root.path().join("riskybandit-orac-seed3");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("riskybandit-orac-seed3"), "{stdout}");
    for f in ["config.json", "metrics.csv", "result.json", "checkpoints/step_1000"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    assert_eq!(fs::read_to_string(dir.join("metrics.csv")).unwrap().lines().count(), 3);

    let ckpt = dir.join("checkpoints/step_1000");
    let eval_dir = root.path().join("eval");
    let out = oraclab(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--eval-episodes",
        "6",
        "--out-dir",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["episodes"], 6);
    assert_eq!(report["step"], 1000);
    assert!(eval_dir.join("eval.json").is_file());

    // The same run again is refused rather than overwritten.
    let again = train(root.path(), &["--agent", "orac", "--seed", "3"]);
    assert!(!again.status.success());
}

#[test]
fn missing_checkpoint_is_reported() {
    let out = oraclab(&["eval", "--checkpoint", "/nonexistent/step_5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint not found"));
}

#[test]
fn bad_arguments_fail_cleanly() {
    let root = tempfile::tempdir().unwrap();
    let out = train(root.path(), &["--agent", "ppo"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown agent"));
    let out = train(root.path(), &["--rho", "0"]);
    assert!(!out.status.success());
    assert_eq!(fs::read_dir(root.path()).unwrap().count(), 0);
}

#[test]
fn flags_override_set_which_overrides_the_config_file() {
    let root = tempfile::tempdir().unwrap();
    let file = root.path().join("base.json");
    fs::write(&file, r#"{"rho": 0.25, "cost-limit": 3.0, "beta-c": 1.0}"#).unwrap();
    let out = train(
        &root.path().join("runs"),
        &["--config", file.to_str().unwrap(), "--set", "rho=0.5", "--set", "cost-limit=2.0", "--rho", "0.1"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let c = config(&root.path().join("runs/riskybandit-saclag-seed0"));
    assert_eq!(c["rho"], 0.1);
    assert_eq!(c["cost-limit"], 2.0);
    assert_eq!(c["beta-c"], 1.0);
    assert_eq!(c["n-quantiles"], 8);
}

#[test]
fn saved_config_reproduces_the_run() {
    let root = tempfile::tempdir().unwrap();
    let first = root.path().join("a");
    assert!(train(&first, &["--agent", "wcsac", "--seed", "5"]).status.success());
    let run = first.join("riskybandit-wcsac-seed5");
    let second = root.path().join("b");
    let out = oraclab(&[
        "train",
        "--config",
        run.join("config.json").to_str().unwrap(),
        "--out-dir",
        second.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rerun = second.join("riskybandit-wcsac-seed5");
    assert_eq!(config(&run), config(&rerun));
    assert_eq!(fs::read(run.join("metrics.csv")).unwrap(), fs::read(rerun.join("metrics.csv")).unwrap());
}

#[test]
fn sweep_writes_one_row_per_run() {
    let root = tempfile::tempdir().unwrap();
    let mut args = vec![
        "sweep",
        "--env",
        "riskybandit",
        "--agent",
        "saclag,orac",
        "--seeds",
        "2",
        "--total-steps",
        "300",
        "--eval-episodes",
        "2",
        "--jobs",
        "2",
        "--out-dir",
        root.path().to_str().unwrap(),
    ];
    args.extend(SMALL);
    let out = oraclab(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(root.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for (agent, seed) in [("saclag", 0), ("saclag", 1), ("orac", 0), ("orac", 1)] {
        assert!(rows.iter().any(|r| r.starts_with(&format!("{agent},{seed},"))), "{table}");
    }
    let summary = fs::read_to_string(root.path().join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.lines().nth(1).unwrap().starts_with("saclag,2,"));
}

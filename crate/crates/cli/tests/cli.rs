use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn groundrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groundrl"))
        .args(args)
        .env_remove("GROUNDRL_OUT_ROOT")
        .output()
        .expect("spawn groundrl")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .to_string()
}

#[test]
fn reward_perfect_match() {
    let o = groundrl(&["reward", "--pred", "0,0,100,100", "--gt", "0,0,100,100"]);
    assert!(o.status.success());
    assert_eq!(value(&stdout(&o), "total"), "2");
}

#[test]
fn reward_worked_example() {
    let o = groundrl(&["reward", "--pred", "50,0,150,100", "--gt", "0,0,100,100", "--alpha", "0.5"]);
    let total: f64 = value(&stdout(&o), "total").parse().unwrap();
    assert!((total - 1.489028).abs() < 1e-6);
}

#[test]
fn reward_sparse_iou_below_threshold() {
    let o = groundrl(&["reward", "--variant", "sparse-iou", "--pred", "0,0,2,2", "--gt", "1,1,3,3"]);
    assert_eq!(value(&stdout(&o), "total"), "0");
}

#[test]
fn reward_all_lists_baselines() {
    let o = groundrl(&["reward", "--pred", "0,0,2,2", "--gt", "1,1,3,3", "--all"]);
    let s = stdout(&o);
    assert_eq!(value(&s, "iou"), "0.142857143");
    assert_eq!(value(&s, "sparse_point"), "1");
    assert_eq!(value(&s, "sparse_iou"), "0");
}

#[test]
fn reward_raw_text_and_format() {
    let o = groundrl(&["reward", "--pred-raw", "[0, 0, 10, 10]", "--gt", "0,0,10,10", "--format-bonus"]);
    let s = stdout(&o);
    assert_eq!(value(&s, "format"), "1");
    assert_eq!(value(&s, "total"), "3");
    let o = groundrl(&["reward", "--pred-raw", "click at (10,20)", "--gt", "0,0,10,10", "--format-bonus"]);
    assert_eq!(value(&stdout(&o), "total"), "0");
}

#[test]
fn malformed_input_is_a_usage_error() {
    let o = groundrl(&["reward", "--pred", "1,2,x,4", "--gt", "0,0,1,1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not a number"));
    let o = groundrl(&["reward", "--pred", "0,0,1,1", "--gt", "0,0,1,1", "--alpha", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = groundrl(&["reward", "--gt", "0,0,1,1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = groundrl(&["bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

fn write_annotations(dir: &Path, lines: &[String]) -> std::path::PathBuf {
    let p = dir.join("ann.jsonl");
    fs::write(&p, lines.join("\n")).unwrap();
    p
}

#[test]
fn score_perfect_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let lines: Vec<String> = (0..5)
        .map(|i| format!("{{\"gt\": [{i}, 0, {}, 20], \"pred\": [{i}, 0, {}, 20]}}", i + 10, i + 10))
        .collect();
    let ann = write_annotations(tmp.path(), &lines);
    let out = tmp.path().join("out");
    let o = groundrl(&["score", ann.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value(&stdout(&o), "accuracy"), "1");
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(value(&report, "mean_reward"), "2");
    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 6);
    assert!(scores.starts_with("line,kind,status,hit,"));
    assert!(out.join("manifest.txt").exists());
}

#[test]
fn score_counts_malformed_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let mut lines: Vec<String> = (0..9)
        .map(|_| "{\"gt\": [0, 0, 10, 10], \"pred\": [0, 0, 10, 10], \"kind\": \"icon\"}".to_string())
        .collect();
    lines.push("{\"gt\": [0, 0, 10, 10], \"pred_raw\": \"somewhere\", \"kind\": \"text\"}".to_string());
    let ann = write_annotations(tmp.path(), &lines);
    let out = tmp.path().join("out");
    let o = groundrl(&["score", ann.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    let s = stdout(&o);
    assert_eq!(value(&s, "accuracy"), "0.9");
    assert_eq!(value(&s, "malformed"), "1");
    assert_eq!(value(&s, "accuracy.text"), "0");
    assert_eq!(value(&s, "accuracy.icon"), "1");
}

#[test]
fn score_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = groundrl(&["score", "/definitely/not/here.jsonl", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let ann = write_annotations(tmp.path(), &["{\"gt\": [0, 0, 1, 1]}".into(), "{\"gt\": [0, 0]}".into()]);
    let o = groundrl(&["score", ann.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"));
}

#[test]
fn train_zero_steps_logs_only_the_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = groundrl(&["train", "--steps", "0", "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success());
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "step,mean_reward,reward_std,kl,grad_norm,holdout_accuracy,probe_distance"
    );
    assert!(lines[1].starts_with("0,"));
    let s = stdout(&o);
    assert_eq!(value(&s, "baseline_accuracy"), value(&s, "final_accuracy"));
}

#[test]
fn train_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = groundrl(&[
        "train", "--steps", "30", "--eval-every", "10", "--seed", "4", "--reward", "sparse-point",
        "--out-dir", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert_eq!(value(&manifest, "command"), "train");
    assert_eq!(value(&manifest, "reward.variant"), "sparse-point");
    assert_eq!(value(&manifest, "grpo.seed"), "4");
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let steps: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["0", "10", "20", "30"]);
    assert_eq!(fs::read_to_string(out.join("trace.csv")).unwrap().lines().count(), 5);
    let ckpt = fs::read_to_string(out.join("checkpoint.txt")).unwrap();
    assert!(groundrl::policy::GaussianBoxPolicy::from_checkpoint(&ckpt).is_ok());
}

#[test]
fn diverging_update_exits_with_numeric_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = groundrl(&["train", "--steps", "5", "--lr", "1e300", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite gradient"));
    assert!(out.join("manifest.txt").exists());
}

#[test]
fn out_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_groundrl"))
        .args(["train", "--steps", "0"])
        .env("GROUNDRL_OUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("train").join("metrics.csv").exists());
}

#[test]
fn sweep_records_failures_and_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let o = groundrl(&[
        "sweep", "--axis", "alpha", "--grid", "0.5;fixed;-2", "--seeds", "2", "--steps", "20",
        "--eval-every", "10", "--out-dir", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let rows: Vec<Vec<&str>> = summary.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["point", "runs", "failures", "accuracy_mean", "accuracy_std", "probe_distance_mean"]);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1][..3], ["0.5", "2", "0"]);
    assert_eq!(rows[2][..3], ["fixed-sigma-32", "2", "0"]);
    assert_eq!(rows[3][..3], ["-2", "2", "2"]);
    assert!(out.join("fixed-sigma-32").join("seed-1").join("metrics.csv").exists());
    let m = fs::read_to_string(out.join("fixed-sigma-32/seed-0/manifest.txt")).unwrap();
    assert_eq!(value(&m, "reward.fixed_sigma"), "32");
}

#[test]
fn sweep_rejects_empty_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let o = groundrl(&["sweep", "--axis", "weights", "--grid", ";", "--out-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

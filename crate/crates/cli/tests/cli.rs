use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cmdp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmdp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn cmdp")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&out.stdout));
    })
}

fn preset(dir: &Path, name: &str) -> String {
    let file = format!("{name}.json");
    let out = cmdp(dir, &["generate", "--preset", name, "--out", &file]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    file
}

#[test]
fn solve_reports_known_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let inst = preset(dir.path(), "single_state_tradeoff");
    let out = cmdp(dir.path(), &["solve", "--instance", &inst]);
    assert!(out.status.success());
    let v = json(&out);
    assert!((v["optimal_value"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert!((v["zeta"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(v["status"], "Optimal");
}

#[test]
fn generate_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, name: &str| {
        let out = cmdp(dir.path(), &["--seed", seed, "generate", "-S", "2", "-A", "2", "-H", "2", "--out", name]);
        assert!(out.status.success());
        fs::read(dir.path().join(name)).unwrap()
    };
    assert_eq!(run("5", "a.json"), run("5", "b.json"));
    assert_ne!(run("5", "a.json"), run("6", "c.json"));
}

#[test]
fn train_writes_outputs_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    preset(dir.path(), "two_state_chain");
    let args = |out: &'static str| {
        vec![
            "--seed", "9", "--out", out, "train", "--instance", "two_state_chain.json", "--epsilon", "1.5", "--K", "3",
            "--T", "5", "--bonus-scale", "0.1", "--out-policy", "pol.json",
        ]
    };
    let first = cmdp(dir.path(), &args("run1"));
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let summary = json(&first);
    assert_eq!(summary["episodes"], 3);
    assert_eq!(summary["all_passed"], true);

    let csv = fs::read_to_string(dir.path().join("run1/run.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "k,v_r_true,v_c_true,regret_cum,cv_cum,lambda_mean,model_updates_cum,wall_ms");
    for f in ["summary.json", "regret.svg", "cv.svg"] {
        assert!(dir.path().join("run1").join(f).exists(), "{f}");
    }
    let last_regret: f64 = lines[3].split(',').nth(3).unwrap().parse().unwrap();
    assert_eq!(summary["regret_total"].as_f64().unwrap(), last_regret);

    assert!(cmdp(dir.path(), &args("run2")).status.success());
    assert_eq!(csv, fs::read_to_string(dir.path().join("run2/run.csv")).unwrap());

    let eval = cmdp(dir.path(), &["evaluate", "--instance", "two_state_chain.json", "--policy", "pol.json", "--episodes", "5000"]);
    assert!(eval.status.success());
    assert_eq!(json(&eval)["within_4_std_err"], true);

    let report = cmdp(dir.path(), &["report", "--run-dir", "run1"]);
    assert!(report.status.success());
    assert_eq!(json(&report)["consistent"], true);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    preset(dir.path(), "two_state_chain");
    fs::write(
        dir.path().join("run.toml"),
        "instance = \"two_state_chain.json\"\nmode = \"strict\"\nepsilon = 1.5\nK = 50\nT = 4\nbonus-scale = 0.1\neval-every = 4\n",
    )
    .unwrap();
    let out = cmdp(dir.path(), &["train", "--config", "run.toml", "--K", "9", "--out-csv", "r.csv"]);
    let summary = json(&out);
    assert_eq!(summary["episodes"], 9);
    assert_eq!(summary["config"]["mode"]["kind"], "strict");
    let passed = summary["all_passed"].as_bool().unwrap();
    assert_eq!(out.status.success(), passed);
    let csv = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(csv.lines().next().unwrap().ends_with(",interpolated"));
    assert_eq!(csv.lines().count(), 10);
}

#[test]
fn failing_verdict_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    preset(dir.path(), "two_state_chain");
    // with a tiny epsilon a 2-episode run cannot be near-optimal
    let out = cmdp(
        dir.path(),
        &["train", "--instance", "two_state_chain.json", "--epsilon", "0.01", "--K", "2", "--T", "2", "--U", "2", "--eps1", "0.5"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["all_passed"], false);
}

#[test]
fn errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmdp(dir.path(), &["solve", "--instance", "missing.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));

    fs::write(dir.path().join("bad.json"), r#"{"S":1,"A":1,"H":1,"P":[[[[0.5]]]],"r":[[[0.5]]],"c":[[[0.5]]],"b":0.5,"s1":0}"#).unwrap();
    let out = cmdp(dir.path(), &["solve", "--instance", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));

    let out = cmdp(dir.path(), &["generate", "--preset", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("two_state_chain"));
}

#[test]
fn suite_subset_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmdp(dir.path(), &["suite", "-c", "9", "-c", "4"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);
    assert_eq!(cmdp(dir.path(), &["suite", "-c", "11"]).status.code(), Some(2));
}

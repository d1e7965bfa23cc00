use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use kmt_core::scheduler::ThresholdSchedule;
use serde_json::Value;

fn kmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kmt")).args(args).env_remove("KMT_THREADS").output().unwrap()
}

fn kmt_ok(args: &[&str]) -> String {
    let out = kmt(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn kmt_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_kmt"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn sum_table_ends_at_delta_star() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("d.csv");
    let args = ["thresholds", "--n", "1024", "--R", "1", "--sigma", "0.25", "--alpha", "0.05", "--kind", "sum"];
    kmt_ok(&[&args[..], &["--out", path_str(&csv_path)]].concat());
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k,value");
    assert_eq!(lines.len(), 1025);
    let last: f64 = lines[1024].strip_prefix("1024,").unwrap().parse().unwrap();

    let json: ThresholdSchedule = serde_json::from_str(&kmt_ok(&[&args[..], &["--json"]].concat())).unwrap();
    assert_eq!(Some(last), json.meta.delta_star);
}

#[test]
fn coverage_report_within_slack() {
    let report: Value = serde_json::from_str(&kmt_ok(&[
        "validate", "coverage", "--n", "256", "--alpha", "0.1", "--trials", "2000", "--seed", "7",
    ]))
    .unwrap();
    let rate = report["exceedance_rate"].as_f64().unwrap();
    let slack = report["slack"].as_f64().unwrap();
    assert!(rate <= 0.1 + slack, "{report}");
    assert_eq!(report["pass"], Value::Bool(true));
}

#[test]
fn min_n_prints_a_power_of_two() {
    let out = kmt(&["hitting", "min-n", "--mu", "-0.25", "--g", "10", "--R", "1", "--sigma", "0.5"]);
    assert!(out.status.success());
    let n: usize = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!(n.is_power_of_two());
    assert!(String::from_utf8(out.stderr).unwrap().contains("seed: 0"));
}

#[test]
fn min_n_table_has_stable_header() {
    let text =
        kmt_ok(&["hitting", "min-n", "--mu", "-0.25,-0.5", "--g", "10", "--paths", "5000", "--max-exponent", "12"]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "mu,g,min_N");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("-0.25,10.0,"));
}

#[test]
fn exit_codes() {
    assert_eq!(kmt(&["thresholds", "--bogus"]).status.code(), Some(2));
    assert_eq!(kmt(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(kmt(&["thresholds", "--n", "8"]).status.code(), Some(2));
    assert_eq!(kmt(&["thresholds", "--n", "6", "--sigma", "0.2"]).status.code(), Some(1));
    assert_eq!(kmt(&["thresholds", "--n", "8", "--sigma", "0.9"]).status.code(), Some(1));
    assert_eq!(kmt(&["--help"]).status.code(), Some(0));
    assert_eq!(kmt(&["--version"]).status.code(), Some(0));
}

#[test]
fn manifest_replay_reproduces_output() {
    let dir = tempfile::tempdir().unwrap();
    let (first, second, manifest) = (dir.path().join("a.csv"), dir.path().join("b.csv"), dir.path().join("m.json"));
    let args: Vec<&str> = "hitting bound --N 256 --mu -0.5 --g 6 --paths 4000 --seed 11".split(' ').collect();
    kmt_ok(&[&args[..], &["--out", path_str(&first), "--manifest", path_str(&manifest)]].concat());
    let recorded: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(recorded["command"], "hitting bound");
    assert_eq!(recorded["seed"], 11);
    assert_eq!(recorded["artifacts"][0].as_str(), Some(path_str(&first)));
    assert_eq!(recorded["parameters"]["paths"], 4000);

    kmt_ok(&["replay", path_str(&manifest), "--out", path_str(&second)]);
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"n": 16, "sigma": 0.1, "kind": "bridge", "alpha": 0.2}"#).unwrap();
    let from_config = kmt_ok(&["--config", path_str(&config), "thresholds", "--alpha", "0.1"]);
    let from_flags = kmt_ok(&["thresholds", "--n", "16", "--sigma", "0.1", "--kind", "bridge", "--alpha", "0.1"]);
    assert_eq!(from_config, from_flags);

    std::fs::write(&config, r#"{"n": "sixteen"}"#).unwrap();
    assert_eq!(kmt(&["--config", path_str(&config), "thresholds"]).status.code(), Some(2));
}

#[test]
fn json_round_trips() {
    let text = kmt_ok(&["thresholds", "--n", "64", "--sigma", "0.3", "--kind", "bridge", "--variant", "--json"]);
    let raw: Value = serde_json::from_str(&text).unwrap();
    let schedule: ThresholdSchedule = serde_json::from_value(raw.clone()).unwrap();
    assert_eq!(serde_json::to_value(&schedule).unwrap(), raw);
    assert_eq!(schedule.values.len(), 64);

    let text = kmt_ok(&["hitting", "bound", "--N", "64", "--mu", "-1", "--g", "4", "--paths", "1000", "--json"]);
    let raw: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(raw["crossing"]["paths"], 1000);
    assert_eq!(
        raw["nontrivial"].as_bool(),
        Some(raw["bound"].as_f64().unwrap() + raw["crossing"]["ci_halfwidth"].as_f64().unwrap() < 1.0)
    );
}

#[test]
fn empirical_reads_stdin_with_header() {
    let out = kmt_stdin(&["empirical", "--n", "32", "--kind", "bridge"], "y\n0.1\n0.9, 0.4\n0.5 0.6\n");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k,sigma_L,sigma_U,threshold");
    assert_eq!(lines.len(), 6);

    let bad = kmt_stdin(&["empirical"], "0.1\nnope\n");
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn changepoint_run_without_alarm_keeps_header() {
    let input: String = (0..200).map(|i| format!("{}\n", 0.4 + 0.2 * ((i % 7) as f64 / 7.0))).collect();
    let out = kmt_stdin(&["changepoint", "run", "--R", "1"], &input);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "t,s,statistic,threshold\n");

    let out = kmt_stdin(&["changepoint", "run", "--R", "1", "--json"], &input);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["observations"], 200);
    assert!(report["alarm"].is_null());
}

#[test]
fn wasserstein_report_accepts_signed_alphabet() {
    let report: Value =
        serde_json::from_str(&kmt_ok(&["validate", "wasserstein", "--alphabet", "-1,0,1", "--n", "5", "--p", "2,3"]))
            .unwrap();
    assert_eq!(report["entries"].as_array().unwrap().len(), 8);
    assert_eq!(report["pass"], Value::Bool(true));
}

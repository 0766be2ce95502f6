use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tpa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpa")).args(args).output().expect("binary runs")
}

fn error_kind(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error record");
    let v: Value = serde_json::from_str(line).expect("error record is JSON");
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn quick_train(dir: &Path, algo: &str, seed: u64) -> Output {
    tpa(&[
        "train",
        "--scenario",
        "miniature",
        "--algo",
        algo,
        "--episodes",
        "20",
        "--eval-every",
        "10",
        "--eval-episodes",
        "5",
        "--checkpoint-every",
        "10",
        "--batch",
        "16",
        "--warmup",
        "50",
        "--d-model",
        "8",
        "--seed",
        &seed.to_string(),
        "--out",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn train_writes_a_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = quick_train(&dir, "EBQ-N", 3);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.snapshot", "metrics.csv", "eval.csv", "summary.json", "report.md", "checkpoints/final.tpqn"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 21);
    let summary: Value = serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["algorithm"], "EBQ-N");
    assert_eq!(summary["episodes_run"], 20);
    let traces: Vec<_> = fs::read_dir(dir.join("traces")).unwrap().collect();
    assert_eq!(traces.len(), 3);

    // the snapshot reproduces the run
    let again = tmp.path().join("again");
    let out = tpa(&["train", "--snapshot", dir.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(fs::read(dir.join("metrics.csv")).unwrap(), fs::read(again.join("metrics.csv")).unwrap());

    // evaluation on a 3x3 team grid from the checkpoint
    let ev = tmp.path().join("eval");
    let out = tpa(&[
        "eval",
        "--checkpoint",
        dir.join("checkpoints/final.tpqn").to_str().unwrap(),
        "--scenario",
        "miniature",
        "--grid",
        "humans=1..3",
        "robots=1,2,3",
        "--trials",
        "2",
        "--out",
        ev.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cells: Value = serde_json::from_slice(&fs::read(ev.join("eval.json")).unwrap()).unwrap();
    assert_eq!(cells.as_array().unwrap().len(), 9);

    // zero-shot order quantities
    let zs = tmp.path().join("zs");
    let out = tpa(&[
        "zeroshot",
        "--checkpoint",
        dir.join("checkpoints/final.tpqn").to_str().unwrap(),
        "--scenario",
        "miniature",
        "--orders",
        "1..3",
        "--trials",
        "2",
        "--out",
        zs.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Value = serde_json::from_slice(&fs::read(zs.join("zeroshot.json")).unwrap()).unwrap();
    let orders: Vec<u64> = rows.as_array().unwrap().iter().map(|r| r["order"].as_u64().unwrap()).collect();
    assert_eq!(orders, [1, 2, 3]);

    // gantt from the recorded trace
    let trace = fs::read_dir(dir.join("traces"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with(".trace.json"))
        .unwrap();
    let g = tmp.path().join("gantt");
    let out = tpa(&["gantt", "--trace", trace.to_str().unwrap(), "--out", g.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(g.join("gantt.svg")).unwrap().starts_with("<svg"));
    let chart: Value = serde_json::from_slice(&fs::read(g.join("gantt.json")).unwrap()).unwrap();
    assert!(chart["bars"].as_array().is_some());
}

#[test]
fn random_baseline_eval_needs_no_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tpa(&["eval", "--algo", "Random", "--scenario", "miniature", "--trials", "3", "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("| | R"));
    let out = tpa(&["eval", "--scenario", "miniature", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "invalid_input");
}

#[test]
fn unknown_algorithm_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tpa(&["train", "--algo", "PPO", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");
}

#[test]
fn missing_scenario_file_reports_an_error_record() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tpa(&["train", "--scenario", "/no/such/scenario.json", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "io");
    let rec: Value = serde_json::from_slice(&fs::read(tmp.path().join("error.json")).unwrap()).unwrap();
    assert_eq!(rec["error"]["kind"], "io");
}

#[test]
fn duplicate_sweep_seeds_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tpa(&["sweep", "--scenario", "miniature", "--seeds", "1,2,1", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "invalid_input");
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed 1"));
}

#[test]
fn report_compares_against_the_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let base = tmp.path().join("d3qn");
    let ebq = tmp.path().join("ebq");
    assert!(quick_train(&base, "D3QN", 0).status.success());
    assert!(quick_train(&ebq, "EBQ-G", 0).status.success());
    for (dir, makespan) in [(&base, 50.0), (&ebq, 40.0)] {
        let path = dir.join("summary.json");
        let mut s: Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        s["final_eval"]["mean_makespan"] = makespan.into();
        fs::write(&path, serde_json::to_vec(&s).unwrap()).unwrap();
    }
    let rep = tmp.path().join("report");
    let out = tpa(&[
        "report",
        base.to_str().unwrap(),
        ebq.to_str().unwrap(),
        tmp.path().join("missing").to_str().unwrap(),
        "--out",
        rep.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rows = csv::Reader::from_path(rep.join("report.csv")).unwrap();
    let ratios: Vec<(String, f64)> = rows
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[7].parse().unwrap())
        })
        .collect();
    assert_eq!(ratios, [("D3QN".to_string(), 1.0), ("EBQ-G".to_string(), 1.25)]);
    let md = fs::read_to_string(rep.join("report.md")).unwrap();
    assert!(md.contains("Runs not included") && md.contains("missing"));

    let out = tpa(&["report", base.to_str().unwrap(), "--out", rep.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn graph_build_and_inspect_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("g/default.graph");
    let out = tpa(&["graph", "build", "--scenario", "default", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let built: Value = serde_json::from_slice(&out.stdout).unwrap();
    let out = tpa(&["graph", "inspect", path.to_str().unwrap()]);
    assert!(out.status.success());
    let inspected: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(built, inspected);
    assert_eq!(inspected["complete"], true);
    let n = inspected["nodes"].as_array().unwrap().len();
    let d = &inspected["distances"];
    for i in 0..n {
        assert_eq!(d[i][i], 0.0);
        for j in 0..n {
            assert_eq!(d[i][j], d[j][i]);
        }
    }

    fs::write(tmp.path().join("junk"), b"not a graph").unwrap();
    let out = tpa(&["graph", "inspect", tmp.path().join("junk").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

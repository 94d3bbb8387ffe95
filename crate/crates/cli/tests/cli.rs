use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ranlat_core::report::read_json_lines;
use ranlat_core::simulator::GroundTruth;
use ranlat_core::DelayDecomposition;

fn ranlat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ranlat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--out", path(dir)];
    args.extend_from_slice(extra);
    let out = ranlat(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn strip_wall_clock(text: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
    v["manifest"]["wall_clock_ms"] = 0.into();
    v
}

#[test]
fn same_seed_same_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = [
        "--preset",
        "a",
        "--packet-count",
        "500",
        "--harq-fail-prob",
        "0.1",
    ];
    simulate(&a, &args);
    simulate(&b, &args);
    for f in ["trace.jsonl", "truth.jsonl", "config.toml"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let c = tmp.path().join("c");
    simulate(&c, &[&args[..], &["--seed", "7"]].concat());
    assert_ne!(
        fs::read(a.join("trace.jsonl")).unwrap(),
        fs::read(c.join("trace.jsonl")).unwrap()
    );
}

#[test]
fn zero_packets_gives_empty_trace() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), &["--packet-count", "0"]);
    assert!(fs::read(tmp.path().join("trace.jsonl")).unwrap().is_empty());
}

#[test]
fn analyzing_an_empty_trace_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = tmp.path().join("empty.jsonl");
    fs::write(&trace, "").unwrap();
    let out = ranlat(&[
        "analyze",
        path(&trace),
        "--out",
        path(&tmp.path().join("r")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_trace_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = tmp.path().join("bad.jsonl");
    fs::write(&trace, "{\"node\":\"UE\"\n").unwrap();
    let out = ranlat(&["decompose", path(&trace), "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(ranlat(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        ranlat(&["simulate", "--preset", "z", "--out", "x"])
            .status
            .code(),
        Some(1)
    );
    let tmp = tempfile::tempdir().unwrap();
    let out = ranlat(&["sweep", "--offsets", "9:1:1", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(ranlat(&["--help"]).status.code(), Some(0));
}

#[test]
fn decompositions_match_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(
        &sim,
        &[
            "--preset",
            "a",
            "--packet-count",
            "2000",
            "--harq-fail-prob",
            "0.1",
        ],
    );
    let out_dir = tmp.path().join("dec");
    let out = ranlat(&[
        "decompose",
        path(&sim.join("trace.jsonl")),
        "--out",
        path(&out_dir),
    ]);
    assert!(out.status.success());
    let truth: Vec<GroundTruth> =
        read_json_lines(fs::read(sim.join("truth.jsonl")).unwrap().as_slice()).unwrap();
    let got: Vec<DelayDecomposition> = read_json_lines(
        fs::read(out_dir.join("decompositions.jsonl"))
            .unwrap()
            .as_slice(),
    )
    .unwrap();
    let want: Vec<DelayDecomposition> = truth.iter().map(|t| t.decomposition).collect();
    assert_eq!(got, want);
    let csv = fs::read_to_string(out_dir.join("decompositions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2001);
}

#[test]
fn analyze_verdicts_set_the_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &["--preset", "a", "--packet-count", "1000"]);
    let trace = sim.join("trace.jsonl");
    let out = ranlat(&[
        "analyze",
        path(&trace),
        "--targets",
        "5:1e-2",
        "--out",
        path(&tmp.path().join("r1")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
    let out = ranlat(&[
        "analyze",
        path(&trace),
        "--targets",
        "30:1e-2",
        "--out",
        path(&tmp.path().join("r2")),
    ]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn report_reproduces_from_its_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &["--preset", "b", "--packet-count", "1000"]);
    let report_dir = tmp.path().join("report");
    let trace = sim.join("trace.jsonl");
    ranlat(&[
        "analyze",
        path(&trace),
        "--preset",
        "b",
        "--out",
        path(&report_dir),
    ]);
    let first = fs::read_to_string(report_dir.join("report.json")).unwrap();
    let manifest = strip_wall_clock(&first)["manifest"].clone();
    let command: Vec<String> = serde_json::from_value(manifest["command"].clone()).unwrap();
    let args: Vec<&str> = command.iter().map(String::as_str).collect();
    ranlat(&args);
    let second = fs::read_to_string(report_dir.join("report.json")).unwrap();
    assert_eq!(strip_wall_clock(&first), strip_wall_clock(&second));
    assert!(manifest["config"].is_object());
    assert_eq!(manifest["seed"], 1);
}

#[test]
fn simulation_reruns_from_config_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    simulate(
        &a,
        &["--preset", "c", "--packet-count", "300", "--seed", "42"],
    );
    let b = tmp.path().join("b");
    simulate(&b, &["--config", path(&a.join("config.toml"))]);
    assert_eq!(
        fs::read(a.join("trace.jsonl")).unwrap(),
        fs::read(b.join("trace.jsonl")).unwrap()
    );
}

#[test]
fn sweep_writes_one_row_per_offset() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ranlat(&[
        "sweep",
        "--preset",
        "b",
        "--packet-count",
        "1000",
        "--offsets",
        "0:9:1",
        "--out",
        path(tmp.path()),
    ]);
    assert!(out.status.success());
    let csv = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert_eq!(csv.lines().filter(|l| l.ends_with(",true")).count(), 1);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("sweep.json")).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    let theta = report["theta_star"].as_u64().unwrap();
    let min_queue = rows
        .iter()
        .map(|r| r["mean_queue_delay_ns"].as_f64().unwrap())
        .fold(f64::INFINITY, f64::min);
    let best = rows
        .iter()
        .find(|r| r["offset_ns"].as_u64() == Some(theta))
        .unwrap();
    assert_eq!(best["mean_queue_delay_ns"].as_f64().unwrap(), min_queue);
}

#[test]
fn journeys_command_reports_anomalies() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &["--preset", "b", "--packet-count", "50"]);
    let text = fs::read_to_string(sim.join("trace.jsonl")).unwrap();
    // drop every core departure: each packet becomes incomplete
    let damaged: String = text
        .lines()
        .filter(|l| !l.contains("CORE_DEPARTURE"))
        .map(|l| format!("{l}\n"))
        .collect();
    let trace = tmp.path().join("damaged.jsonl");
    fs::write(&trace, damaged).unwrap();
    let out = ranlat(&[
        "journeys",
        path(&trace),
        "--out",
        path(&tmp.path().join("j")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let anomalies = fs::read_to_string(tmp.path().join("j/anomalies.jsonl")).unwrap();
    assert_eq!(anomalies.lines().count(), 50);
}

//! End-to-end tests of the binary: documented examples, exit codes,
//! the run store, config layering, and artifact round trips.

use serde_json::Value;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aptail"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[test]
fn index_example_lists_four_progressions() {
    let v = run_json(&["index", "--N", "5", "--k", "3", "--no-record"]);
    assert_eq!(v["count"], 4);
    assert_eq!(v["progressions"].as_array().unwrap().len(), 4);
    assert_eq!(v["progressions"][0], serde_json::json!([1, 2, 3]));
}

#[test]
fn tail_exact_example_is_exact_eighth() {
    let v = run_json(&[
        "tail-exact",
        "--N",
        "3",
        "--k",
        "3",
        "--p",
        "0.5",
        "--threshold",
        "1",
        "--no-record",
    ]);
    assert_eq!(v["probability"].as_f64().unwrap(), 0.125);
}

#[test]
fn poisson_rate_example() {
    let v = run_json(&[
        "rates",
        "--regime",
        "poisson",
        "--mu",
        "1",
        "--t",
        "1",
        "--no-record",
    ]);
    assert_eq!(v["rate"].as_f64().unwrap(), 2.0 * std::f64::consts::LN_2 - 1.0);
}

#[test]
fn invalid_probability_exits_two() {
    let out = run(&[
        "moments", "--N", "10", "--k", "3", "--p", "1.5", "--no-record",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oversized_exact_tail_exits_three() {
    let out = run(&[
        "tail-exact",
        "--N",
        "40",
        "--k",
        "3",
        "--p",
        "0.5",
        "--threshold",
        "1",
        "--no-record",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    std::fs::write(&cfg, "bogus = 1\n").unwrap();
    let out = run(&[
        "index",
        "--N",
        "5",
        "--k",
        "3",
        "--config",
        cfg.to_str().unwrap(),
        "--no-record",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_records_append_and_digests_match() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("runs.jsonl");
    for seed in ["1", "2"] {
        let out = run(&[
            "tail-mc",
            "--N",
            "10",
            "--k",
            "3",
            "--p",
            "0.3",
            "--threshold",
            "2",
            "--samples",
            "1000",
            "--seed",
            seed,
            "--run-store",
            store.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let text = std::fs::read_to_string(&store).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    for line in lines {
        let record: Value = serde_json::from_str(line).unwrap();
        assert_eq!(record["command"], "tail-mc");
        let n = record["config"]["N"].as_u64().unwrap();
        let k = record["config"]["k"].as_u64().unwrap();
        let p = record["config"]["p"].as_f64().unwrap();
        let text = format!("{n}:{k}:{:016x}", p.to_bits());
        let expect = format!("{:016x}", fnv1a64(text.as_bytes()));
        assert_eq!(record["params_digest"].as_str().unwrap(), expect);
        assert_eq!(record["outputs"]["n"], 1000);
    }
}

#[test]
fn phase_one_cell_csv_and_anchors() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("grid.csv");
    let v = run_json(&[
        "phase",
        "--N",
        "1000000",
        "--k",
        "3",
        "--p-min",
        "1e-3",
        "--p-max",
        "1e-3",
        "--p-steps",
        "1",
        "--t-min",
        "10",
        "--t-max",
        "10",
        "--t-steps",
        "1",
        "--csv",
        csv.to_str().unwrap(),
        "--no-record",
    ]);
    assert_eq!(v["cells"], 1);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "p,t,regime,t_over_sigma,gauss_ratio,poisson_ratio,density_side,rate"
    );
    let anchors: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("grid.anchors.json")).unwrap())
            .unwrap();
    assert_eq!(anchors["p_density_boundary"].as_f64().unwrap(), 1e-3);
}

#[test]
fn phase_fifty_by_fifty_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("grid.csv");
    let v = run_json(&[
        "phase",
        "--N",
        "1000000",
        "--k",
        "3",
        "--p-min",
        "1e-5",
        "--p-max",
        "1e-1",
        "--p-steps",
        "50",
        "--t-min",
        "1",
        "--t-max",
        "1e8",
        "--t-steps",
        "50",
        "--csv",
        csv.to_str().unwrap(),
        "--no-record",
    ]);
    assert_eq!(v["cells"], 2500);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 8);
        // Numeric fields reparse to values that re-render identically.
        for idx in [0usize, 1, 3, 4, 5, 6, 7] {
            let parsed: f64 = fields[idx].parse().unwrap();
            assert_eq!(parsed.to_string(), fields[idx]);
        }
        rows += 1;
    }
    assert_eq!(rows, 2500);
}

#[test]
fn config_layering_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    std::fs::write(&cfg, "samples = 500\nseed = 9\n").unwrap();
    let base = [
        "tail-mc", "--N", "10", "--k", "3", "--p", "0.3", "--threshold", "2", "--no-record",
        "--config",
    ];
    let mut args: Vec<&str> = base.to_vec();
    args.push(cfg.to_str().unwrap());
    let v = run_json(&args);
    assert_eq!(v["n"], 500);
    assert_eq!(v["seed"], 9);

    args.extend_from_slice(&["--samples", "200"]);
    let v = run_json(&args);
    assert_eq!(v["n"], 200);
    assert_eq!(v["seed"], 9);
}

#[test]
fn out_flag_writes_artifact_and_record_points_to_it() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("runs.jsonl");
    let artifact = dir.path().join("moments.json");
    let out = run(&[
        "moments",
        "--N",
        "100",
        "--k",
        "3",
        "--p",
        "0.2",
        "--run-store",
        store.to_str().unwrap(),
        "--out",
        artifact.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let written: Value =
        serde_json::from_str(&std::fs::read_to_string(&artifact).unwrap()).unwrap();
    assert_eq!(written["n"], 100);
    let record: Value =
        serde_json::from_str(std::fs::read_to_string(&store).unwrap().lines().next().unwrap())
            .unwrap();
    assert_eq!(
        record["outputs"]["artifact"].as_str().unwrap(),
        artifact.to_str().unwrap()
    );
}

#[test]
fn same_seed_reproduces_output() {
    let args = [
        "tail-mc", "--N", "12", "--k", "3", "--p", "0.25", "--threshold", "2", "--samples",
        "2000", "--seed", "77", "--no-record",
    ];
    let first = run(&args);
    let second = run(&args);
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn min_seed_witness_is_sorted() {
    let v = run_json(&[
        "min-seed",
        "--N",
        "10",
        "--k",
        "3",
        "--p",
        "0.4",
        "--t",
        "1.2",
        "--no-record",
    ]);
    let witness: Vec<u64> = v["witness"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap())
        .collect();
    let mut sorted = witness.clone();
    sorted.sort_unstable();
    assert_eq!(witness, sorted);
    assert!(!witness.is_empty());
}

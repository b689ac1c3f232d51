use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mrloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrloop"))
        .args(args)
        .env("SPIRAL_THREADS", "0")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "bad JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = "allocation = 1+1x{1/8,1/4,1/2,1}+1\nd_model = 16\nn_heads = 2\nvocab = 32\n";

#[test]
fn forward_reports_loop_lengths_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.cfg", SMALL);
    let a = mrloop(&["forward", "--config", &cfg, "--seed", "4", "--len", "40"]);
    assert_eq!(a.status.code(), Some(0));
    let a = json(&a);
    assert_eq!(a["loop_lengths"], serde_json::json!([5, 10, 20, 40]));
    assert_eq!(a["shape"], serde_json::json!([40, 16]));
    let b = json(&mrloop(&["forward", "--config", &cfg, "--seed", "4", "--len", "40"]));
    assert_eq!(a["checksum"], b["checksum"]);
    let c = json(&mrloop(&["forward", "--config", &cfg, "--seed", "5", "--len", "40"]));
    assert_ne!(a["checksum"], c["checksum"]);
}

#[test]
fn forward_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.cfg", SMALL);
    let short = mrloop(&["forward", "--config", &cfg, "--seed", "1", "--len", "5"]);
    assert_eq!(short.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&short.stderr).contains("iteration 0"));

    let bad = write_config(dir.path(), "bad.cfg", "allocation = 1+1x{1/4}+1\nwidth = 3\n");
    assert_eq!(
        mrloop(&["forward", "--config", &bad, "--seed", "1"]).status.code(),
        Some(2)
    );
    let missing = dir.path().join("nope.cfg");
    let out = mrloop(&["forward", "--config", missing.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn forward_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.cfg", SMALL);
    let out = dir.path().join("run");
    let o = mrloop(&[
        "forward",
        "--config",
        &cfg,
        "--seed",
        "2",
        "--len",
        "16",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let written: Value = serde_json::from_str(&std::fs::read_to_string(out.join("forward.json")).unwrap()).unwrap();
    assert_eq!(manifest["run_id"], written["run_id"]);
    assert_eq!(manifest["seed"], 2);
    assert_eq!(manifest["outputs"][0]["path"], "forward.json");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn verify_default_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.cfg", SMALL);
    let out = mrloop(&[
        "verify", "--config", &cfg, "--seed", "1", "--suite", "all", "--trials", "16",
    ]);
    let report = json(&out);
    assert_eq!(out.status.code(), Some(0), "{report:#}");
    assert_eq!(report["passed"], true);
}

#[test]
fn verify_names_the_leak() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "leaky.cfg",
        "allocation = 1+1x{1/4,1}+1\nshifts = 2,0\nd_model = 16\nn_heads = 2\nvocab = 32\n",
    );
    let out = mrloop(&[
        "verify",
        "--config",
        &cfg,
        "--seed",
        "1",
        "--suite",
        "causality",
        "--len",
        "32",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let report = json(&out);
    let first = &report["checks"][0]["detail"]["first_violation"];
    assert_eq!(first["iterations"], serde_json::json!([0]));
    let (j, i) = (
        first["perturbed"].as_u64().unwrap(),
        first["affected"].as_u64().unwrap(),
    );
    assert!(i < j);
}

#[test]
fn verify_equivalence_reports_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.cfg", SMALL);
    let out = mrloop(&["verify", "--config", &cfg, "--seed", "3", "--suite", "equivalence"]);
    assert_eq!(out.status.code(), Some(0));
    let check = &json(&out)["checks"][0];
    assert!(check["magnitude"].as_f64().unwrap() <= 1e-10);
    assert_eq!(check["detail"]["len"], 96);
}

#[test]
fn probe_outputs_are_bounded_sized_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.cfg", SMALL);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = mrloop(&[
            "probe",
            "--config",
            &cfg,
            "--seed",
            "7",
            "--sequences",
            "2",
            "--len",
            "32",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for name in ["entropy.csv", "lam.csv", "dynamic_heads.csv", "heatmap.csv"] {
        let text = std::fs::read_to_string(a.join(name)).unwrap();
        assert_eq!(text, std::fs::read_to_string(b.join(name)).unwrap(), "{name}");
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let value_col = header.iter().position(|h| *h == "value" || *h == "range").unwrap();
        for line in lines {
            let v: f64 = line.split(',').nth(value_col).unwrap().parse().unwrap();
            assert!((0.0..=1.0).contains(&v), "{name}: {line}");
        }
    }
    let entropy = std::fs::read_to_string(a.join("entropy.csv")).unwrap();
    assert_eq!(entropy.lines().next().unwrap(), "loop,layer,head,value");
    assert_eq!(entropy.lines().count(), 1 + 4 * 2);
    // 1 loop layer × 2 heads → ⌈0.8⌉ = 1 flagged head per metric
    let dynamic = std::fs::read_to_string(a.join("dynamic_heads.csv")).unwrap();
    assert_eq!(dynamic.lines().filter(|l| l.starts_with("entropy,")).count(), 1);
    assert_eq!(dynamic.lines().filter(|l| l.starts_with("lam,")).count(), 1);
}

#[test]
fn flops_presets_match_reference_totals() {
    let total = |alloc: &str, preset: &str| -> f64 {
        let o = mrloop(&["flops", "--alloc", alloc, "--preset", preset]);
        assert!(o.status.success());
        let text = String::from_utf8(o.stdout).unwrap();
        let line = text.lines().find(|l| l.starts_with("total")).unwrap();
        line.split_whitespace().nth(1).unwrap().parse().unwrap()
    };
    for (alloc, preset, expect) in [
        ("baseline", "160m", 1.65e12),
        ("4+8x{1,1}+4", "410m", 4.59e12),
        ("4+8×{1/8,1/4,1/2,1}+4", "410m", 4.11e12),
    ] {
        let got = total(alloc, preset);
        assert!(((got - expect) / expect).abs() < 0.03, "{alloc}: {got:e}");
    }
    assert_eq!(mrloop(&["flops", "--alloc", "4+8x{+4"]).status.code(), Some(2));
    assert_eq!(
        mrloop(&["flops", "--alloc", "baseline", "--preset", "7b"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn triggers_and_pipeline_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trig");
    let o = mrloop(&[
        "triggers",
        "--alloc",
        "1+1x{1/8,1/4,1/2,1}+1",
        "--len",
        "64",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let summary = json(&o);
    assert_eq!(summary["spread_zero_offsets"], 3);
    assert_eq!(summary["spread"], 1);
    let csv = std::fs::read_to_string(out.join("triggers.csv")).unwrap();
    assert_eq!(csv.lines().count(), 65);

    let overlap = mrloop(&["pipeline", "--alloc", "1+1x{1/8,1}+1"]);
    assert_eq!(overlap.status.code(), Some(2));
    let o = mrloop(&["pipeline", "--alloc", "1+1x{1/8,1}+1", "--no-overlap", "--len", "32"]);
    assert!(o.status.success());
    let r = json(&o);
    assert_eq!(r["dependencies_hold"], true);
    assert_eq!(r["sequential_work"], r["pipelined_work"]);
}

#[test]
fn thread_cap_does_not_change_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.cfg", SMALL);
    let args = [
        "verify",
        "--config",
        &cfg,
        "--seed",
        "2",
        "--suite",
        "causality",
        "--trials",
        "8",
    ];
    let seq = mrloop(&args);
    let par = Command::new(env!("CARGO_BIN_EXE_mrloop"))
        .args(args)
        .env("SPIRAL_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(seq.stdout, par.stdout);
}

#[test]
fn decode_generates_requested_tokens() {
    let o = mrloop(&[
        "decode",
        "--alloc",
        "1+1x{1/4,1}+1",
        "--seed",
        "3",
        "--len",
        "9",
        "--new",
        "5",
    ]);
    assert!(o.status.success());
    let r = json(&o);
    assert_eq!(r["prompt"].as_array().unwrap().len(), 9);
    assert_eq!(r["generated"].as_array().unwrap().len(), 5);
}

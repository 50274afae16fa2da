//! The `neuroloop` binary: argument handling, exit codes and outputs.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::process::{Command, Output};

use neuroloop::sim::{alpha_peak_recording, write_chunk, Montage};

fn neuroloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neuroloop")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(neuroloop(&[]).status.code(), Some(2));
    assert_eq!(neuroloop(&["simulate", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(neuroloop(&["replay", "--in", "x", "--policy", "sideways"]).status.code(), Some(2));
    assert_eq!(neuroloop(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_1() {
    let out = neuroloop(&["simulate", "--scenario", "/definitely/missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
    assert_eq!(neuroloop(&["bench", "--channels", "4"]).status.code(), Some(1));
}

#[test]
fn simulate_then_replay_reproduces_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    std::fs::write(
        &scenario,
        r#"{"seed": 5, "montage": "adaptive18", "segments": [
            {"state": "neutral", "duration_s": 40},
            {"state": "internal", "duration_s": 40}
        ]}"#,
    )
    .unwrap();
    let (log, chunks, replayed) = (dir.path().join("sim.jsonl"), dir.path().join("chunks.jsonl"), dir.path().join("re.jsonl"));
    let summary = stdout_json(&neuroloop(&[
        "simulate",
        "--scenario",
        path(&scenario),
        "--out",
        path(&log),
        "--chunks-out",
        path(&chunks),
    ]));
    assert_eq!(summary["decisions"], 3);
    assert_eq!(summary["final_stream"], 131);
    let again = stdout_json(&neuroloop(&["replay", "--in", path(&chunks), "--out", path(&replayed)]));
    assert_eq!(summary, again);
    assert_eq!(std::fs::read_to_string(&log).unwrap(), std::fs::read_to_string(&replayed).unwrap());

    // A different seed changes the data, so the logged deltas differ.
    let other = dir.path().join("other.jsonl");
    stdout_json(&neuroloop(&["simulate", "--scenario", path(&scenario), "--seed", "6", "--out", path(&other)]));
    assert_ne!(std::fs::read_to_string(&log).unwrap(), std::fs::read_to_string(&other).unwrap());
}

#[test]
fn simulate_without_out_streams_the_log_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.json");
    std::fs::write(&scenario, r#"{"seed": 1, "montage": "adaptive18", "segments": [{"state": "neutral", "duration_s": 60}]}"#)
        .unwrap();
    let out = neuroloop(&["simulate", "--scenario", path(&scenario), "--policy", "negative"]);
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let decisions: Vec<_> = lines.iter().filter(|l| l.get("window_index").is_some()).collect();
    assert_eq!(decisions.len(), 2);
    assert!(decisions.iter().all(|d| d["policy"] == "negative"));
}

#[test]
fn iaf_reports_the_alpha_peak() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("rest.jsonl");
    let labels = Montage::Adaptive18.labels();
    let rec = alpha_peak_recording(Some(10.3), 130.0, 500.0, &labels, 3);
    let mut w = BufWriter::new(File::create(&file).unwrap());
    for s in 0..130 {
        write_chunk(&mut w, None, &rec.slice(s * 500, (s + 1) * 500).unwrap()).unwrap();
    }
    drop(w);
    let v = stdout_json(&neuroloop(&["iaf", "--in", path(&file)]));
    assert_eq!(v["quality"], "peak-found");
    assert!((v["paf"].as_f64().unwrap() - 10.3).abs() <= 0.2, "{v}");
    assert_eq!(v["fallback"], false);
    let f_low = v["f_low"].as_f64().unwrap();
    assert_eq!(v["bands"]["theta"]["high"].as_f64().unwrap(), f_low);
    assert_eq!(v["bands"]["alpha"]["low"].as_f64().unwrap(), f_low);
}

#[test]
fn classify_synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (features, model) = (dir.path().join("f.csv"), dir.path().join("m.json"));
    assert!(neuroloop(&["classify", "synth", "--out", path(&features), "--seed", "2"]).status.success());
    let report = stdout_json(&neuroloop(&[
        "classify",
        "train",
        "--features",
        path(&features),
        "--seed",
        "2",
        "--out",
        path(&model),
    ]));
    assert!(report["test"]["accuracy"].as_f64().unwrap() >= 0.95);
    assert_eq!(report["split"]["train_ids"].as_array().unwrap().len(), 12);
    let eval = stdout_json(&neuroloop(&["classify", "eval", "--model", path(&model), "--features", path(&features)]));
    assert_eq!(eval["n"], 22 * 36);
    assert!(eval["accuracy"].as_f64().unwrap() >= 0.95);
}

#[test]
fn bench_reports_latency() {
    let v = stdout_json(&neuroloop(&["bench", "--channels", "20", "--iterations", "2"]));
    assert_eq!(v["windows"], 2);
    assert_eq!(v["channels"], 20);
    assert!(v["latency_ms"]["max"].as_f64().unwrap() > 0.0);
}

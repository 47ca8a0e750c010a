use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vfoa-skf"))
        .args(args)
        .env("VFOA_SKF_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, frames: usize, seed: u64, count: usize) {
    ok(&[
        "simulate",
        "--frames",
        &frames.to_string(),
        "--seed",
        &seed.to_string(),
        "--count",
        &count.to_string(),
        "--out",
        s(dir),
    ]);
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn simulate_track_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, 80, 3, 1);
    for f in [
        "recording.json",
        "recording.csv",
        "recording.truth.csv",
        "manifest.json",
        "outputs.json",
    ] {
        assert!(data.join(f).is_file(), "missing {f}");
    }
    let rec = data.join("recording");
    let trk = tmp.path().join("track");
    ok(&["track", "--recording", s(&rec), "--out", s(&trk)]);
    let csv = fs::read_to_string(trk.join("track.csv")).unwrap();
    let summary = json(&trk.join("summary.json"));
    let persons = summary["persons"].as_array().unwrap().len();
    assert_eq!(persons, 2);
    assert_eq!(csv.lines().count(), 1 + 80 * persons);
    assert!(summary["max_gaze_head_distance"].as_f64().unwrap() <= 35.0 + 1e-9);

    let ev = tmp.path().join("eval");
    ok(&[
        "evaluate",
        "--track",
        s(&trk.join("track.csv")),
        "--recording",
        s(&rec),
        "--out",
        s(&ev),
    ]);
    let report = json(&ev.join("report.json"));
    let frr = report["frr_mean"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&frr));
    let r = &report["recordings"][0];
    assert!(r["gaze_rmse_deg"].as_f64().is_some() && r["head_rmse_deg"].as_f64().is_some());
    for f in ["frr.csv", "confusion.csv", "shots.csv"] {
        assert!(ev.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn track_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, 50, 9, 1);
    let rec = data.join("recording");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["track", "--recording", s(&rec), "--out", s(&a)]);
    ok(&["track", "--recording", s(&rec), "--out", s(&b)]);
    assert_eq!(
        fs::read(a.join("track.csv")).unwrap(),
        fs::read(b.join("track.csv")).unwrap()
    );
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&a, 40, 5, 1);
    simulate(&b, 40, 5, 1);
    for f in ["recording.csv", "recording.truth.csv", "recording.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

/// Annotated label of every `(frame, person)` in a recording CSV.
fn annotations(csv: &Path) -> HashMap<(String, String), String> {
    let mut rdr = csv::Reader::from_path(csv).unwrap();
    let h = rdr.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|x| x == name).unwrap();
    let (f, id, v) = (col("frame"), col("target_id"), col("vfoa"));
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            ((r[f].to_string(), r[id].to_string()), r[v].to_string())
        })
        .collect()
}

#[test]
fn perfect_track_scores_full_frr() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, 60, 4, 1);
    let rec = data.join("recording");
    let trk = tmp.path().join("track");
    ok(&["track", "--recording", s(&rec), "--out", s(&trk)]);

    let gt = annotations(&data.join("recording.csv"));
    let mut rdr = csv::Reader::from_path(trk.join("track.csv")).unwrap();
    let mut w = csv::Writer::from_path(tmp.path().join("perfect.csv")).unwrap();
    w.write_record(rdr.headers().unwrap()).unwrap();
    for r in rdr.records() {
        let mut r: Vec<String> = r.unwrap().iter().map(String::from).collect();
        let label = &gt[&(r[0].clone(), r[1].clone())];
        r[2] = if label.is_empty() {
            "0".into()
        } else {
            label.clone()
        };
        w.write_record(&r).unwrap();
    }
    w.flush().unwrap();

    let ev = tmp.path().join("eval");
    ok(&[
        "evaluate",
        "--track",
        s(&tmp.path().join("perfect.csv")),
        "--recording",
        s(&rec),
        "--metrics",
        "frr,confusion",
        "--out",
        s(&ev),
    ]);
    let report = json(&ev.join("report.json"));
    assert_eq!(report["frr_mean"].as_f64().unwrap(), 100.0);
    for (r, row) in report["confusion"]["normalized"]
        .as_array()
        .unwrap()
        .iter()
        .enumerate()
    {
        for (c, v) in row.as_array().unwrap().iter().enumerate() {
            let v = v.as_f64().unwrap();
            assert!(v == 0.0 || (r == c && v == 1.0));
        }
    }
}

#[test]
fn evaluate_without_annotations_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, 30, 2, 1);
    let rec = data.join("recording");
    let trk = tmp.path().join("track");
    ok(&["track", "--recording", s(&rec), "--out", s(&trk)]);

    let path = data.join("recording.csv");
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    let header = rdr.headers().unwrap().clone();
    let v = header.iter().position(|x| x == "vfoa").unwrap();
    let rows: Vec<Vec<String>> = rdr
        .records()
        .map(|r| {
            let mut r: Vec<String> = r.unwrap().iter().map(String::from).collect();
            r[v].clear();
            r
        })
        .collect();
    let mut w = csv::Writer::from_path(&path).unwrap();
    w.write_record(&header).unwrap();
    for r in rows {
        w.write_record(&r).unwrap();
    }
    w.flush().unwrap();

    let out = run(&[
        "evaluate",
        "--track",
        s(&trk.join("track.csv")),
        "--recording",
        s(&rec),
        "--metrics",
        "frr",
        "--out",
        s(&tmp.path().join("eval")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn leave_one_out_writes_one_fold_per_recording() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, 40, 11, 3);
    let out = tmp.path().join("learn");
    ok(&[
        "learn",
        "--data",
        s(&data),
        "--max-iters",
        "3",
        "--leave-one-out",
        "--add-one",
        "--out",
        s(&out),
    ]);
    let mut folds: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("fold-"))
        .collect();
    folds.sort();
    assert_eq!(
        folds,
        [
            "fold-recording-000",
            "fold-recording-001",
            "fold-recording-002"
        ]
    );
    for f in &folds {
        for file in ["params.json", "table.json", "loglik.csv", "fit.json"] {
            assert!(out.join(f).join(file).is_file(), "{f}/{file}");
        }
        let table = json(&out.join(f).join("table.json"));
        assert!(table
            .as_object()
            .unwrap()
            .values()
            .all(|v| v.as_f64().unwrap() > 0.0));
    }
}

#[test]
fn bad_inputs_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, "{ not json").unwrap();
    let out = run(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let out = run(&[
        "track",
        "--recording",
        s(&tmp.path().join("missing")),
        "--out",
        s(&tmp.path().join("t")),
    ]);
    assert!(!out.status.success());

    let out = run(&[
        "learn",
        "--data",
        s(tmp.path()),
        "--out",
        s(&tmp.path().join("l")),
    ]);
    assert!(!out.status.success());
}

#[test]
fn bench_writes_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    ok(&[
        "bench",
        "--n-active",
        "1,2",
        "--m-passive",
        "0,1",
        "--frames",
        "20",
        "--out",
        s(&out),
    ]);
    let csv = fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(json(&out.join("bench.json"))["exponent"].as_f64().is_some());
}

use std::path::Path;
use std::process::{Command, Output};

const TINY_CONFIG: &str = r#"{
  "seed": 3,
  "acoustics": { "sim": { "max_duration_s": 0.25 } },
  "dataset": {
    "upstream_per_room": { "train": 4, "val": 2, "test": 2 },
    "downstream_sizes": { "train": 32, "val": 16, "test": 16 },
    "upstream_rooms": 8,
    "downstream_rooms": 6,
    "downstream_rirs_per_room": 4,
    "segment_s": 0.5
  },
  "train": { "n": 6, "m": 2, "batches_per_epoch": 3, "val_batches": 2, "max_epochs": 2, "downstream_batch": 8 },
  "grid": { "strategies": ["soft"], "temperatures": [0.1], "tasks": ["c50"], "include_supervised": false, "jobs": 1 }
}"#;

fn roomembed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roomembed"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = roomembed(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(str::to_owned).collect()];
    rows.extend(r.records().map(|rec| rec.unwrap().iter().map(str::to_owned).collect()));
    rows
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = t.join("config.json");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let c = s(&cfg);
    let (up_rirs, down_rirs) = (t.join("rirs-up"), t.join("rirs-down"));
    let (up, down) = (t.join("up"), t.join("down"));

    let out = ok(&["gen-rirs", "--config", c, "--out", s(&up_rirs), "--count-rooms", "8", "--rirs-per-room", "2", "--prefix", "up-"]);
    assert!(out.contains("16 RIRs from 8 rooms"), "{out}");
    let wavs = std::fs::read_dir(&up_rirs)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "wav"))
        .count();
    assert_eq!(wavs, 16);
    let records: Vec<serde_json::Value> = std::fs::read_to_string(up_rirs.join("rirs.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 16);
    assert!(records.iter().all(|r| (27.0..=500.0).contains(&r["volume_m3"].as_f64().unwrap())));
    for h in ["rt60_hist.csv", "c50_hist.csv", "volume_hist.csv"] {
        let rows = csv_rows(&up_rirs.join(h));
        assert_eq!(rows[0], ["bin_low", "bin_high", "count"]);
        let total: usize = rows[1..].iter().map(|r| r[2].parse::<usize>().unwrap()).sum();
        assert_eq!(total, 16);
    }
    ok(&["gen-rirs", "--config", c, "--out", s(&down_rirs), "--count-rooms", "6", "--rirs-per-room", "4", "--prefix", "dn-"]);

    let out = ok(&["build-dataset", "--config", c, "--rirs", s(&up_rirs), "--synthetic", "--role", "upstream", "--out", s(&up)]);
    assert!(out.contains("train 32 / val 16 / test 16"), "{out}");
    // Reusing upstream rooms downstream is rejected.
    let clash = roomembed(&[
        "build-dataset", "--config", c, "--rirs", s(&up_rirs), "--synthetic", "--role", "downstream",
        "--disjoint-from", s(&up), "--out", s(&t.join("clash")),
    ]);
    assert_eq!(clash.status.code(), Some(1));
    ok(&[
        "build-dataset", "--config", c, "--rirs", s(&down_rirs), "--synthetic", "--role", "downstream",
        "--disjoint-from", s(&up), "--out", s(&down),
    ]);

    let run_up = t.join("run-up");
    let out = ok(&["train-upstream", "--config", c, "--data", s(&up), "--strategy", "hard", "--tau", "0.1", "--out", s(&run_up)]);
    assert!(out.contains("\"strategy\": \"hard\""), "{out}");
    assert!(run_up.join("best.ckpt").exists() && run_up.join("record.json").exists());
    let echo: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run_up.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["train"]["temperature"], 0.1);
    assert_eq!(echo["signal"]["fft_size"], 32);

    let again = roomembed(&["train-upstream", "--config", c, "--data", s(&up), "--out", s(&run_up)]);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ok(&["train-upstream", "--config", c, "--data", s(&up), "--out", s(&run_up), "--force"]);

    let ckpt = run_up.join("best.ckpt");
    let run_vol = t.join("run-volume");
    ok(&["train-downstream", "--config", c, "--encoder", s(&ckpt), "--data", s(&down), "--task", "volume", "--out", s(&run_vol)]);
    let out = ok(&["evaluate", "--config", c, "--run", s(&run_vol), "--split", "test"]);
    for m in ["ACC", "PR", "RE"] {
        assert!(out.contains(m), "{out}");
    }
    let rows = csv_rows(&run_vol.join("eval-test.csv"));
    assert_eq!(rows.len(), 4);

    let run_rt = t.join("run-rt60");
    ok(&["train-downstream", "--config", c, "--encoder", s(&ckpt), "--data", s(&down), "--task", "rt60", "--out", s(&run_rt)]);
    let out = ok(&["evaluate", "--config", c, "--run", s(&run_rt)]);
    for m in ["RMSE", "CORR", "BIAS"] {
        assert!(out.contains(m), "{out}");
    }
    assert!(out.lines().any(|l| l.starts_with("RMSE") && l.ends_with(" s")), "{out}");

    let run_sup = t.join("run-supervised");
    ok(&["train-downstream", "--config", c, "--supervised", "--data", s(&down), "--task", "c50", "--out", s(&run_sup)]);

    let emb = t.join("emb/test.csv");
    ok(&["export-embeddings", "--config", c, "--encoder", s(&ckpt), "--manifest", s(&down), "--split", "test", "--out", s(&emb)]);
    let rows = csv_rows(&emb);
    assert_eq!(rows.len(), 17);
    assert_eq!(rows[0].len(), 6 + 64);

    let grid = t.join("grid");
    let out = ok(&["grid", "--config", c, "--upstream", s(&up), "--downstream", s(&down), "--out", s(&grid)]);
    assert!(out.contains("c50"), "{out}");
    assert_eq!(csv_rows(&grid.join("grid.csv")).len(), 2);
}

#[test]
fn invalid_strategy_lists_the_choices() {
    let out = roomembed(&["train-upstream", "--data", "x", "--out", "y", "--strategy", "medium"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["soft", "hard", "pos-independent"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn unknown_config_key_is_a_user_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"trian": {}}"#).unwrap();
    let out = roomembed(&["gen-rirs", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_checkpoint_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = roomembed(&["evaluate", "--run", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("best.ckpt"));
}

#[test]
fn help_exits_zero() {
    assert!(roomembed(&["--help"]).status.success());
}

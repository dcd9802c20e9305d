use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepfeat"))
        .args(args)
        .current_dir(dir)
        .env("DEEPFEAT_CACHE_DIR", dir.join("cache"))
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert_eq!(code(&out), 0, "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn small_spec(dir: &Path) -> PathBuf {
    let spec = r#"{
        "name": "small", "length": 24, "samples_per_class": 6, "noise": 0.1,
        "classes": [
            {"name": "wave", "kind": "sinusoid", "freq": 0.125, "amp": 1.0},
            {"name": "ramp", "kind": "linear_trend", "slope": 0.1}
        ]
    }"#;
    let p = dir.join("spec.json");
    fs::write(&p, spec).unwrap();
    p
}

fn small_dataset(dir: &Path) -> PathBuf {
    let spec = small_spec(dir);
    ok(dir, &["synth", "--spec", spec.to_str().unwrap(), "--seed", "3", "--out", "ds"]);
    dir.join("ds")
}

fn header_width(csv: &Path) -> usize {
    fs::read_to_string(csv).unwrap().lines().next().unwrap().split(',').count()
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn synth_default_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let out = ok(tmp.path(), &["synth", "--seed", "5", "--out", "a"]);
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["length"], 128);
    assert_eq!(summary["samples"], 200);
    assert_eq!(summary["classes"], 4);
    ok(tmp.path(), &["synth", "--seed", "5", "--out", "b"]);
    let (a, b) = (snapshot(&tmp.path().join("a")), snapshot(&tmp.path().join("b")));
    assert_eq!(a.iter().map(|f| f.0.as_str()).collect::<Vec<_>>(), ["data.csv", "manifest.json"]);
    assert_eq!(a, b);
}

#[test]
fn usage_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("one.json"), r#"{"name":"x","length":8,"samples_per_class":2,"noise":0.1,"classes":[{"name":"a","kind":"ar1","phi":0.5}]}"#).unwrap();
    fs::write(dir.join("junk.json"), "{ not json").unwrap();
    assert_eq!(code(&run(dir, &["synth", "--spec", "one.json", "--out", "o"])), 2);
    assert_eq!(code(&run(dir, &["synth", "--spec", "junk.json", "--out", "o"])), 2);
    assert_eq!(code(&run(dir, &["synth"])), 2);
    assert_eq!(code(&run(dir, &["fly"])), 2);
    let ds = small_dataset(dir);
    let ds = ds.to_str().unwrap();
    assert_eq!(code(&run(dir, &["extract", "--dataset", ds, "--branch", "deep", "--out", "f.csv"])), 2);
    assert_eq!(code(&run(dir, &["extract", "--dataset", ds, "--branch", "pf", "--out", "f.csv"])), 2);
    assert_eq!(code(&run(dir, &["extract", "--dataset", "nowhere", "--branch", "rf", "--out", "f.csv"])), 2);
    assert_eq!(code(&run(dir, &["train", "--dataset", ds, "--out", "m", "--mode", "rf", "--epochs", "0"])), 2);
    assert_eq!(code(&run(dir, &["train", "--dataset", ds, "--out", "m", "--mode", "both"])), 2);
    assert_eq!(code(&run(dir, &["train", "--dataset", ds, "--out", "m", "--mode", "full"])), 2);
    assert_eq!(code(&run(dir, &["ablate", "--dataset", ds, "--out", "a", "--modes", "rf", "--runs", "1"])), 2);
    assert_eq!(code(&run(dir, &["eval", "--checkpoint", "missing", "--dataset", ds])), 2);
    assert_eq!(code(&run(dir, &["report", "--runs", "missing.csv", "--out", "r"])), 2);
    assert!(!dir.join("m").exists());
}

#[test]
fn extract_widths() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let ds = small_dataset(dir);
    let before = snapshot(&ds);
    let ds = ds.to_str().unwrap();
    ok(dir, &["extract", "--dataset", ds, "--branch", "rf", "--out", "rf.csv"]);
    assert_eq!(header_width(&dir.join("rf.csv")), 2 + 20_000);
    ok(dir, &["extract", "--dataset", ds, "--branch", "global", "--out", "g.csv"]);
    assert_eq!(header_width(&dir.join("g.csv")), 2 + 128);
    ok(dir, &["extract", "--dataset", ds, "--branch", "local", "--out", "l.csv"]);
    assert_eq!(header_width(&dir.join("l.csv")), 2 + 256);
    let rows = fs::read_to_string(dir.join("l.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 12);
    ok(dir, &["init-weights", "--out", "w.tsar", "--layers", "1", "--context", "256"]);
    ok(dir, &["extract", "--dataset", ds, "--branch", "pf", "--weights", "w.tsar", "--out", "pf.csv"]);
    assert_eq!(header_width(&dir.join("pf.csv")), 2 + 768);
    assert!(fs::read_dir(dir.join("cache")).unwrap().count() == 1);
    ok(dir, &["extract", "--dataset", ds, "--branch", "pf", "--weights", "w.tsar", "--out", "pf2.csv"]);
    assert_eq!(fs::read(dir.join("pf.csv")).unwrap(), fs::read(dir.join("pf2.csv")).unwrap());
    assert_eq!(snapshot(&dir.join("ds")), before);
}

#[test]
fn train_eval_round_trip() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let ds = small_dataset(dir);
    let ds = ds.to_str().unwrap();
    fs::write(dir.join("cfg.json"), r#"{"train": {"epochs": 1, "seed": 4, "head": {"hidden": [16], "dropout": 0.2, "ln_eps": 1e-5}}, "rocket_kernels": 20}"#).unwrap();
    let common = ["--config", "cfg.json", "--dataset", ds, "--mode", "rf", "--epochs", "3"];
    let out = ok(dir, &[&["train", "--out", "m1"][..], &common].concat());
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(summary["accuracy"].as_f64().unwrap() >= 0.0);
    ok(dir, &[&["train", "--out", "m2"][..], &common].concat());
    let history = fs::read_to_string(dir.join("m1/history.csv")).unwrap();
    assert_eq!(history.lines().next().unwrap(), "epoch,train_loss,train_acc,test_acc,test_macro_f1,lr");
    assert_eq!(history.lines().count(), 1 + 3);
    assert_eq!(history, fs::read_to_string(dir.join("m2/history.csv")).unwrap());
    assert_eq!(fs::read(dir.join("m1/model.tsar")).unwrap(), fs::read(dir.join("m2/model.tsar")).unwrap());

    let report: serde_json::Value = serde_json::from_str(&ok(dir, &["eval", "--checkpoint", "m1", "--dataset", ds])).unwrap();
    assert_eq!(report["accuracy"], summary["test"]["accuracy"]);
    let all: serde_json::Value =
        serde_json::from_str(&ok(dir, &["eval", "--checkpoint", "m1", "--dataset", ds, "--split", "all"])).unwrap();
    let support: u64 = all["confusion"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(support, 12);

    fs::write(dir.join("m1/model.tsar"), b"TSAR junk").unwrap();
    assert_eq!(code(&run(dir, &["eval", "--checkpoint", "m1", "--dataset", ds])), 1);
}

#[test]
fn ablate_and_report() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let ds = small_dataset(dir);
    let ds = ds.to_str().unwrap();
    ok(dir, &["ablate", "--dataset", ds, "--out", "abl", "--modes", "rf", "--runs", "2", "--epochs", "1", "--kernels", "10", "--jobs", "2"]);
    let table = fs::read_to_string(dir.join("abl/table_accuracy.csv")).unwrap();
    assert_eq!(table.lines().collect::<Vec<_>>()[0], "model,small");
    assert!(table.lines().nth(1).unwrap().starts_with("RF,"));
    for f in ["runs.csv", "summary.csv", "table_macro_f1.csv", "cohens_d.csv"] {
        assert!(dir.join("abl").join(f).is_file(), "{f}");
    }

    let runs = "dataset,mode,run,seed,accuracy,macro_f1\nd,rf,0,0,0.5,0.4\nd,rf,1,1,0.7,0.6\nd,full,0,0,0.5,0.4\nd,full,1,1,0.7,0.6\n";
    fs::write(dir.join("runs.csv"), runs).unwrap();
    let stdout = ok(dir, &["report", "--runs", "runs.csv", "--out", "rep"]);
    assert_eq!(stdout.lines().collect::<Vec<_>>(), ["model,d", "RF,60.0±14.1", "Full,60.0±14.1"]);
    let d = fs::read_to_string(dir.join("rep/cohens_d.csv")).unwrap();
    assert!(d.lines().any(|l| l == "d,accuracy,Full,0.0000,0.0000"), "{d}");
}

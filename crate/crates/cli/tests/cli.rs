use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn neuroedge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neuroedge")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

/// The single run directory created under `out`.
fn only_run(out: &Path) -> PathBuf {
    let dirs: Vec<_> = std::fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

#[test]
fn report_writes_agreeing_text_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = neuroedge(&["report", "--devices", fixture("devices.toml").to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = only_run(tmp.path());
    let text = std::fs::read_to_string(run.join("report.txt")).unwrap();
    let mut csv = csv::Reader::from_path(run.join("table.csv")).unwrap();
    let headers = csv.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let mut rows = 0;
    for rec in csv.records() {
        let rec = rec.unwrap();
        rows += 1;
        let line = text.lines().find(|l| l.split_whitespace().next() == Some(&rec[col("device")])).unwrap();
        let energy: f64 = rec[col("energy_mj")].parse().unwrap();
        assert!(line.contains(&format!("{energy:.4}")), "{line}");
    }
    assert_eq!(rows, 7);
    let claims = std::fs::read_to_string(run.join("claims.csv")).unwrap();
    assert_eq!(claims.lines().count(), 7);
    assert!(!claims.contains("false"));
}

#[test]
fn exit_codes_follow_the_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().to_str().unwrap();
    assert_eq!(neuroedge(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(neuroedge(&["train", "--out", o]).status.code(), Some(1), "missing dataset");

    let empty = tmp.path().join("empty.toml");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(neuroedge(&["report", "--devices", empty.to_str().unwrap(), "--out", o]).status.code(), Some(2));

    let wrong = tmp.path().join("wrong.toml");
    let text = std::fs::read_to_string(fixture("devices.toml")).unwrap().replace("printed = 1733", "printed = 1500");
    std::fs::write(&wrong, text).unwrap();
    assert_eq!(neuroedge(&["report", "--devices", wrong.to_str().unwrap(), "--out", o]).status.code(), Some(3));

    let bad_config = tmp.path().join("bad.toml");
    std::fs::write(&bad_config, "command = \"report\"\nunknown_key = 1\n").unwrap();
    assert_eq!(neuroedge(&["--config", bad_config.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn convert_rejects_a_spiking_model() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("map");
    let out = neuroedge(&["map", "--preset", "pi", "--out", o.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("fits a single chip"));
    let run = only_run(&o);
    let util = std::fs::read_to_string(run.join("utilization.csv")).unwrap();
    assert!(util.starts_with("core,chip,neurons,blocks,fill"));

    // Build a spiking model, then feed it back to convert.
    let t = tmp.path().join("train");
    assert!(neuroedge(&["train", "--synthetic", "2", "--epochs", "1", "--preset", "pi", "--out", t.to_str().unwrap()]).status.success());
    let ann = only_run(&t).join("model.smod");
    let c = tmp.path().join("convert");
    assert!(neuroedge(&["convert", "--model", ann.to_str().unwrap(), "--epochs", "0", "--out", c.to_str().unwrap()]).status.success());
    let snn = only_run(&c).join("snn.smod");
    let again = neuroedge(&["convert", "--model", snn.to_str().unwrap(), "--epochs", "0", "--out", c.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(1));
}

#[test]
fn search_resume_continues_numbering() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("a");
    assert!(neuroedge(&["search", "--budget", "1", "--out", first.to_str().unwrap()]).status.success());
    let ledger = only_run(&first).join("ledger.jsonl");
    assert_eq!(std::fs::read_to_string(&ledger).unwrap().lines().count(), 1);

    let second = tmp.path().join("b");
    let out = neuroedge(&["search", "--budget", "12", "--resume", ledger.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert!(out.status.success());
    let resumed = std::fs::read_to_string(only_run(&second).join("ledger.jsonl")).unwrap();
    let indices: Vec<u64> = resumed.lines().map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["index"].as_u64().unwrap()).collect();
    assert_eq!(indices, (0..12).collect::<Vec<_>>());
    assert_eq!(std::fs::read_to_string(&ledger).unwrap().lines().count(), 1, "source ledger untouched");
}

#[test]
fn simulate_trace_has_window_over_dt_steps() {
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("sim");
    let t = tmp.path().join("train");
    assert!(neuroedge(&["train", "--synthetic", "2", "--epochs", "1", "--preset", "pi", "--out", t.to_str().unwrap()]).status.success());
    let c = tmp.path().join("convert");
    let ann = only_run(&t).join("model.smod");
    assert!(neuroedge(&["convert", "--model", ann.to_str().unwrap(), "--epochs", "0", "--out", c.to_str().unwrap()]).status.success());
    let snn = only_run(&c).join("snn.smod");
    let out = neuroedge(&[
        "simulate",
        "--model",
        snn.to_str().unwrap(),
        "--synthetic",
        "5",
        "--window-ms",
        "25",
        "--energy",
        fixture("energy.toml").to_str().unwrap(),
        "--out",
        m.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = only_run(&m);
    let probs = std::fs::read_to_string(run.join("probabilities.csv")).unwrap();
    assert_eq!(probs.lines().count(), 1 + 25 * 7);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("simulation.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 25);
    assert!(summary["energy"]["dynamic_power_w"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["realtime"]["pass"], true);
}

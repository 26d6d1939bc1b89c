use std::path::Path;
use std::process::{Command, Output};

fn rankfolio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankfolio"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path) -> String {
    let out = dir.join("syn");
    let o = rankfolio(&["synth", "--output-dir", out.to_str().unwrap(), "--equities", "240", "--quarters", "16", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.join("panel.csv").to_str().unwrap().to_string()
}

#[test]
fn unknown_predictor_is_a_usage_error() {
    let o = rankfolio(&["backtest", "--input", "x.csv", "--output-dir", "o", "--predictor", "svm"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let o = rankfolio(&["backtest", "--input", missing.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap(), "--predictor", "mgl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pipeline:"));
}

#[test]
fn analyze_then_figures() {
    let dir = tempfile::tempdir().unwrap();
    let panel = synth(dir.path());
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let args = ["--jobs", "1", "analyze", "--input", &panel, "--output-dir", out_s, "--predictor", "mgl,random", "--mc-trials", "1000"];
    let o = rankfolio(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read(out.join("report.json")).unwrap();
    assert!(rankfolio(&args).status.success());
    assert_eq!(first, std::fs::read(out.join("report.json")).unwrap(), "reruns are byte-identical");

    let cd = std::fs::read_to_string(out.join("fig_cd-returns.csv")).unwrap();
    let mut lines = cd.lines();
    assert_eq!(lines.next(), Some("cd,mgl,random"));
    assert_eq!(lines.count(), 10);
    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["provenance"]["config_hash"].as_str().unwrap().len(), 64);

    let figs = dir.path().join("figs");
    let o = rankfolio(&[
        "figures",
        "--report",
        out.join("report.json").to_str().unwrap(),
        "--figure",
        "butterfly",
        "--output-dir",
        figs.to_str().unwrap(),
        "--predictor",
        "random",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bf = std::fs::read_to_string(figs.join("fig_butterfly.csv")).unwrap();
    assert_eq!(bf.lines().count(), 241);
}

#[test]
fn backtest_report_cannot_feed_analysis_figures() {
    let dir = tempfile::tempdir().unwrap();
    let panel = synth(dir.path());
    let out = dir.path().join("bt");
    let o = rankfolio(&["backtest", "--input", &panel, "--output-dir", out.to_str().unwrap(), "--predictor", "mgl"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = rankfolio(&[
        "figures",
        "--report",
        out.join("report.json").to_str().unwrap(),
        "--figure",
        "w-success",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("analyze"));
}

#[test]
fn ingest_round_trips_a_synthetic_panel() {
    let dir = tempfile::tempdir().unwrap();
    let panel = synth(dir.path());
    let out = dir.path().join("ing");
    let o = rankfolio(&["ingest", "--input", &panel, "--output-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("quality.json").exists());
    assert_eq!(std::fs::read(out.join("panel.csv")).unwrap(), std::fs::read(&panel).unwrap());
}

#[test]
fn churn_mc_zero_noise() {
    let o = rankfolio(&["churn-mc", "--equities", "140", "--weeks", "8", "--seeds", "2", "--noise", "0", "--drift", "0.5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["points"][0]["mean_churn_fraction"].as_f64(), Some(0.0));
    assert_eq!(v["sampler"]["kind"], "gaussian");
}

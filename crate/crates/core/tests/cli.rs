mod common;

use std::path::Path;
use std::process::Command;

fn otafl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_otafl")).args(args).output().unwrap()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    std::fs::write(&path, serde_json::to_string(&common::small_config(7)).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn design_then_bound_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("d");
    let o = otafl(&["design", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("deployment.json").exists());
    let b = dir.path().join("b");
    let o = otafl(&[
        "bound",
        "--config",
        &cfg,
        "--deployment",
        out.join("deployment.json").to_str().unwrap(),
        "--design",
        out.join("design.json").to_str().unwrap(),
        "--policy",
        "zero-bias",
        "--out",
        b.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(header(&b.join("bound.csv")), "t,init,bias,trans,noise,total,init_source");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(b.join("bound.json")).unwrap()).unwrap();
    assert_eq!(report["policy"], "zero-bias");
}

#[test]
fn compare_writes_all_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("c");
    let o = otafl(&["compare", "--config", &cfg, "--replicates", "2", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(header(&out.join("loss.csv")), "policy,round,elapsed_ms,mean,std_error");
    assert_eq!(header(&out.join("accuracy.csv")), "policy,round,elapsed_ms,mean,std_error");
    assert_eq!(
        header(&out.join("participation.csv")),
        "rank,device,distance_m,path_gain,policy,transmit_frequency,mean_weight,expected_participation"
    );
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["policies"].as_array().unwrap().len(), 5);
    let vanilla = std::fs::read_to_string(out.join("participation.csv")).unwrap();
    for line in vanilla.lines().filter(|l| l.contains(",vanilla-ota,")) {
        assert_eq!(line.split(',').nth(5).unwrap(), "1.0");
    }
}

#[test]
fn run_single_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("r");
    let o = otafl(&["run", "--config", &cfg, "--policy", "min-variance", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["policies"][0]["policy"], "min-variance");
}

#[test]
fn errors_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"budget_ms": 0.0}"#).unwrap();
    let o = otafl(&["run", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    let err: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(err["error"], "config");
    let o = otafl(&["run", "--config", "/nonexistent.toml"]);
    let err: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(err["error"], "io");
    let cfg = write_config(dir.path());
    let o = otafl(&["run", "--config", &cfg, "--policy", "nope"]);
    assert!(!o.status.success());
}

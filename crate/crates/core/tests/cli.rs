//! Command-line behavior: outputs, exit codes, overwrite refusal.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vecsim::scenario::Scenario;

fn vecsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vecsim")).args(args).output().expect("binary runs")
}

fn small_scenario(dir: &Path) -> String {
    let mut s = Scenario::desk();
    s.clock.horizon = 60;
    s.world.sdv_count = 10;
    s.world.rsu_count = 2;
    s.world.service_count = 200;
    let path = dir.join("small.toml");
    fs::write(&path, s.echo()).unwrap();
    path.display().to_string()
}

#[test]
fn generate_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("desk.toml");
    let p = path.to_str().unwrap();
    assert_eq!(vecsim(&["generate", "--preset", "desk", "--seed", "7", "--out", p]).status.code(), Some(0));
    let s = Scenario::load(&path).unwrap();
    assert_eq!(s.seed, 7);

    let again = vecsim(&["generate", "--out", p]);
    assert_eq!(again.status.code(), Some(2), "existing file is not replaced");
    assert_eq!(vecsim(&["generate", "--out", p, "--overwrite"]).status.code(), Some(0));

    let ok = vecsim(&["validate", p]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("ok: desk"));
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[clock]\ndt = -1.0\nhorizon = 10\n").unwrap();
    let out = vecsim(&["validate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("clock.dt"));

    let garbled = dir.path().join("garbled.toml");
    fs::write(&garbled, "seed = [").unwrap();
    assert_eq!(vecsim(&["validate", garbled.to_str().unwrap()]).status.code(), Some(1));

    let missing = dir.path().join("missing.toml");
    assert_eq!(vecsim(&["validate", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn run_writes_outputs_and_report_refolds_them() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    let first = vecsim(&["run", &scenario, "--out", o, "--seed", "3"]);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    for f in ["events.ndjson", "frames.ndjson", "scenario.toml", "summary.csv", "report.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("policy,cache_size_gb,hit_rate_pct,avg_response_time_s,qos,space_utilization_pct\n"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 3);

    // A non-empty output directory is refused without --overwrite.
    assert_eq!(vecsim(&["run", &scenario, "--out", o, "--seed", "3"]).status.code(), Some(2));

    let refold = dir.path().join("refold.ndjson");
    let r = vecsim(&["report", o, "--out", refold.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(fs::read_to_string(refold).unwrap(), fs::read_to_string(out.join("frames.ndjson")).unwrap());
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        assert_eq!(vecsim(&["run", &scenario, "--out", d.to_str().unwrap(), "--seed", "11"]).status.code(), Some(0));
    }
    for f in ["events.ndjson", "frames.ndjson", "report.json", "summary.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn sweep_covers_sizes_and_policies() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let out = dir.path().join("sweep");
    let o = vecsim(&["sweep", &scenario, "--out", out.to_str().unwrap(), "--sizes", "4,8"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 5);
    for p in ["random", "fifo", "lru", "lfu", "clock"] {
        assert!(summary.lines().any(|l| l.starts_with(&format!("{p},4,"))), "{p} missing");
    }
}

#[test]
fn oversized_catalog_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table2.toml");
    assert_eq!(vecsim(&["generate", "--preset", "table2", "--out", path.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(vecsim(&["validate", path.to_str().unwrap()]).status.code(), Some(0));
    let out = dir.path().join("run");
    let o = vecsim(&["run", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

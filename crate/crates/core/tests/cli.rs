use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn edgeswarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgeswarm"))
        .args(args)
        .env_remove("EDGESWARM_CONFIG")
        .output()
        .unwrap()
}

fn scenario(file: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(file)
        .display()
        .to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, arch: &str, seed: u64) -> PathBuf {
    let out = dir.join(format!("{arch}-{seed}.jsonl"));
    let o = edgeswarm(&[
        "simulate",
        "--scenario",
        &scenario("paramedic_five_rights.json"),
        "--arch",
        arch,
        "--seed",
        &seed.to_string(),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn report_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let log = simulate(dir.path(), "agent", 42);
    let (r1, r2) = (dir.path().join("r1.json"), dir.path().join("r2.json"));
    for r in [&r1, &r2] {
        assert_eq!(edgeswarm(&["report", "--log", p(&log), "--out", p(r)]).status.code(), Some(0));
    }
    let bytes = std::fs::read(&r1).unwrap();
    assert_eq!(bytes, std::fs::read(&r2).unwrap());
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["seed"], 42);
    assert_eq!(v["arch_mode"], "agent");
    let text = edgeswarm(&["report", "--log", p(&log), "--format", "text"]);
    assert!(String::from_utf8(text.stdout).unwrap().contains("tasks.first_try"));
}

#[test]
fn agent_mode_lowers_timeouts_against_remote() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (simulate(dir.path(), "remote", 4), simulate(dir.path(), "agent", 4));
    let o = edgeswarm(&["compare", "--log-a", p(&a), "--log-b", p(&b)]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["deltas"]["tasks.timeout"].as_f64().unwrap() < 0.0, "{v}");
}

#[test]
fn compare_with_differing_seeds_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (simulate(dir.path(), "agent", 1), simulate(dir.path(), "agent", 2));
    let o = edgeswarm(&["compare", "--log-a", p(&a), "--log-b", p(&b)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr).unwrap().contains("seed"));
}

#[test]
fn seed_range_writes_logs_and_ordered_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgeswarm(&[
        "simulate",
        "--scenario",
        &scenario("firefighter_indoor.json"),
        "--seeds",
        "3..6",
        "--out-dir",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let reports: Vec<Value> = serde_json::from_slice(
        &std::fs::read(dir.path().join("firefighter-indoor-agent-reports.json")).unwrap(),
    )
    .unwrap();
    let seeds: Vec<u64> = reports.iter().map(|r| r["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, [3, 4, 5, 6]);
    assert!(dir.path().join("firefighter-indoor-agent-seed5.jsonl").exists());
}

#[test]
fn invalid_scenario_exits_one_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"schema_version": 1, "scenario_id": "bad", "duration_s": 10, "arch_mode": "agent",
            "towers": [], "devices": [{"device_id": "d", "memory_capacity_bytes": 1,
            "waypoints": [{"t_s": 20, "x": 0, "y": 0}]}]}"#,
    )
    .unwrap();
    let o = edgeswarm(&["scenario", "validate", "--scenario", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr).unwrap().contains("devices[0].waypoints[0].t_s"));
    let missing = edgeswarm(&["scenario", "validate", "--scenario", "/nonexistent.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn topology_ingest_normalizes_and_flags_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("towers.csv");
    let o = edgeswarm(&["topology", "ingest", "--csv", &scenario("urban_walk_towers.csv"), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let again = dir.path().join("again.csv");
    assert_eq!(edgeswarm(&["topology", "ingest", "--csv", p(&out), "--out", p(&again)]).status.code(), Some(0));
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());

    let bad = dir.path().join("bad.csv");
    std::fs::write(
        &bad,
        "tower_id,lat,lon,rat,max_bandwidth_bps,range_m,base_latency_s\n\
         ok,34.05,-118.25,4G,50000000,2000,0.05\n\
         broken,north,-118.25,4G,50000000,2000,0.05\n",
    )
    .unwrap();
    let o = edgeswarm(&["topology", "ingest", "--csv", p(&bad), "--format", "json"]);
    assert_eq!(o.status.code(), Some(1));
    let towers: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(towers.as_array().unwrap().len(), 1);
    assert!(String::from_utf8(o.stderr).unwrap().contains("line 3"));
}

#[test]
fn trace_exports_battery_csv() {
    let dir = tempfile::tempdir().unwrap();
    let log = simulate(dir.path(), "agent", 0);
    let o = edgeswarm(&["trace", "--log", p(&log)]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("t_s,device_id,battery_pct,memory_used_bytes\n"));
    assert!(text.lines().count() > 3600);
}

#[test]
fn malformed_log_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("junk.jsonl");
    std::fs::write(&log, "{not json}\n").unwrap();
    assert_eq!(edgeswarm(&["report", "--log", p(&log)]).status.code(), Some(1));
}

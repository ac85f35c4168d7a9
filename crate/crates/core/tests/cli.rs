use std::path::Path;
use std::process::{Command, Output};

use dpagg::harness::{CommitteeSize, NoiseCommitteeSize, WorldConfig};

fn small_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = WorldConfig::desk();
    cfg.rounds = 1;
    cfg.population.w = 500;
    cfg.dp.delta_target = 1e-4;
    cfg.committees.master = CommitteeSize { c: 7, a: 3 };
    cfg.committees.dp_noise = NoiseCommitteeSize { c: 7, a: 3, b_off: 0 };
    cfg.committees.decryption = CommitteeSize { c: 7, a: 3 };
    cfg.committees.num_decryption_committees = 1;
    cfg.committees.enforce_union_bound = false;
    cfg.ahe.degree = 64;
    cfg.model.dim = 40;
    let path = dir.join("world.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn dpagg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpagg")).args(args).output().unwrap()
}

#[test]
fn run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let o = dpagg(&["run", "--config", cfg.to_str().unwrap(), "--seed", "3", "--out", out.to_str().unwrap(), "--check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("round_1.json").exists());
    assert!(out.join("ledger.csv").exists());
}

#[test]
fn adversary_flag_is_detected_under_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = dpagg(&["run", "--config", cfg.to_str().unwrap(), "--pit", "off", "--adversary", "modify-leaf-ct", "--check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("detections [commitment-mismatch]"));
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut v: serde_json::Value = serde_json::from_str(&WorldConfig::desk().to_json()).unwrap();
    v["committees"]["decryption"]["a"] = serde_json::json!("many");
    std::fs::write(&path, v.to_string()).unwrap();
    let o = dpagg(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("committees.decryption.a"));

    let mut v: serde_json::Value = serde_json::from_str(&WorldConfig::desk().to_json()).unwrap();
    v["dp"]["q"] = serde_json::json!(1.5);
    std::fs::write(&path, v.to_string()).unwrap();
    let o = dpagg(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dp.q"));
}

#[test]
fn unknown_adversary_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = dpagg(&["run", "--config", cfg.to_str().unwrap(), "--adversary", "gremlin"]);
    assert!(!o.status.success());
}

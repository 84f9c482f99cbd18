use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cycloid(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cycloid"))
        .current_dir(repo())
        .env_remove("CYCLOID_OUT_DIR")
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn shipped_configs() -> Vec<String> {
    let mut out = Vec::new();
    for dir in ["actuators", "control", "robots", "morphology", "policies", "streams"] {
        for e in std::fs::read_dir(repo().join("configs").join(dir)).unwrap() {
            out.push(format!("configs/{dir}/{}", e.unwrap().file_name().to_string_lossy()));
        }
    }
    out.sort();
    out
}

#[test]
fn validate_accepts_shipped_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let files = shipped_configs();
    let args: Vec<&str> = std::iter::once("validate").chain(files.iter().map(String::as_str)).collect();
    let o = cycloid(tmp.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), files.len());
}

#[test]
fn validate_rejects_bad_config() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "schema_version = 1\nkind = \"actuator\"\nname = \"x\"\n").unwrap();
    let o = cycloid(tmp.path(), &["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = cycloid(tmp.path(), &["validate", "configs/missing.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(cycloid(tmp.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(cycloid(tmp.path(), &["bus", "analyze", "--bogus"]).status.code(), Some(1));
    assert_eq!(cycloid(tmp.path(), &["dyno", "efficiency", "--actuator", "nope"]).status.code(), Some(1));
    assert_eq!(cycloid(tmp.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cycloid(tmp.path(), &["dyno", "durability", "--actuator", "5010", "--mass", "2"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bench_compare_two_specs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cycloid(
        tmp.path(),
        &["bench", "compare", "configs/robots/berkeley_humanoid_lite.toml", "configs/robots/example_hobby_biped.toml"],
    );
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(tmp.path().join("bench-compare/comparison.csv")).unwrap();
    let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(data.len(), 2);
}

#[test]
fn run_name_cannot_escape_out_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    for name in ["../escape", "/tmp/escape", "a/../../escape"] {
        let o = cycloid(&out, &["--run-name", name, "bus", "analyze"]);
        assert_eq!(o.status.code(), Some(1), "{name}");
    }
    assert!(!tmp.path().join("escape").exists());
    assert!(!out.exists());
}

#[test]
fn out_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_cycloid"))
        .current_dir(repo())
        .env("CYCLOID_OUT_DIR", tmp.path())
        .args(["bus", "analyze"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(tmp.path().join("bus-analyze/bus.csv").is_file());
}

#[test]
fn manifest_hashes_match_and_reproduce() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("a");
    let o = cycloid(&first, &["dyno", "backlash", "--seed", "17", "--units", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let dir = first.join("dyno-backlash");
    let m: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 17);
    for f in m["outputs"].as_array().unwrap() {
        let bytes = std::fs::read(dir.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(cycloid_cli::sha256_hex(&bytes), f["sha256"].as_str().unwrap());
    }
    let args: Vec<String> = m["args"].as_array().unwrap().iter().map(|a| a.as_str().unwrap().to_string()).collect();
    let second = tmp.path().join("b");
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(cycloid(&second, &argv).status.code(), Some(0));
    let m2: Value = serde_json::from_str(&std::fs::read_to_string(second.join("dyno-backlash/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["outputs"], m2["outputs"]);
}

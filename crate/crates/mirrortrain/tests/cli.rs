mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mirrortrain"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MIRRORTRAIN_LOG")
        .output()
        .unwrap()
}

fn error_of(out: &Output) -> Value {
    assert!(!out.status.success());
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    let line = text.lines().last().expect("an error line on stderr");
    serde_json::from_str::<Value>(line).unwrap()["error"].clone()
}

fn write_quick_config(dir: &Path, edit: impl FnOnce(&mut Value)) -> String {
    let mut v = common::quick_config().echo();
    edit(&mut v);
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn help_and_version_succeed() {
    let dir = tempfile::tempdir().unwrap();
    for flag in ["--help", "--version"] {
        let out = run(&[flag], dir.path());
        assert!(out.status.success(), "{flag}");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn usage_errors_are_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let e = error_of(&run(&["simulate", "--bogus"], dir.path()));
    assert_eq!(e["kind"], "usage");
    let e = error_of(&run(&["teleport"], dir.path()));
    assert_eq!(e["kind"], "usage");
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_quick_config(dir.path(), |v| v["cohort_size"] = 1.into());
    let e = error_of(&run(&["simulate", "--config", &config], dir.path()));
    assert_eq!(e["kind"], "invalid_config");
    assert_eq!(e["field"], "cohort_size");

    std::fs::write(dir.path().join("bad.json"), "{\"cohort_size\": 3,").unwrap();
    let e = error_of(&run(&["simulate", "--config", "bad.json"], dir.path()));
    assert_eq!(e["kind"], "config_parse");
    assert!(e["path"].as_str().unwrap().ends_with("bad.json"));

    let e = error_of(&run(&["simulate", "--config", "absent.json"], dir.path()));
    assert_eq!(e["kind"], "io");
}

#[test]
fn analyzing_an_empty_directory_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let e = error_of(&run(&["analyze", "--out", "."], dir.path()));
    assert_eq!(e["kind"], "no_sessions");
}

#[test]
fn staged_commands_write_the_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_quick_config(dir.path(), |_| {});
    let out = run(&["simulate", "--config", &config, "--out", "cohort", "--jobs", "1"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["sessions"].as_array().unwrap().len(), 3);
    let cohort = dir.path().join("cohort");
    for p in 0..3 {
        let d = cohort.join(format!("participant_{p:02}"));
        for f in ["session.json", "kin_true.csv", "kin_contralateral.csv", "kin_virtual.csv", "emg.bin", "ground_truth.json"] {
            assert!(d.join(f).is_file(), "{}", d.join(f).display());
        }
    }
    for cmd in ["analyze", "decode"] {
        let out = run(&[cmd, "--out", "cohort"], dir.path());
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["fig2.csv", "fig3.csv", "fig4.csv", "report.json", "decode_report.json"] {
        assert!(cohort.join(f).is_file(), "{f}");
    }
    for p in 0..3 {
        for m in ["model_mimicked.json", "model_mirrored.json"] {
            assert!(cohort.join(format!("participant_{p:02}")).join(m).is_file());
        }
    }
    let fig2 = std::fs::read_to_string(cohort.join("fig2.csv")).unwrap();
    assert!(fig2.starts_with("metric,paradigm,participant,value\n"));
    assert_eq!(fig2.lines().count(), 1 + 2 * 3);
}

#[test]
fn seed_override_changes_outputs_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_quick_config(dir.path(), |v| v["cohort_size"] = 2.into());
    for (out, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        let r = run(&["simulate", "--config", &config, "--seed", seed, "--out", out], dir.path());
        assert!(r.status.success());
    }
    let a = common::tree(&dir.path().join("a"));
    assert_eq!(a, common::tree(&dir.path().join("b")));
    assert_ne!(a, common::tree(&dir.path().join("c")));
}

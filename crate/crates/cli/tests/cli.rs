//! Exit codes and outputs of the command-line tool.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
    "dataset": {"synthetic": {"communities": 3, "community_size": 40, "nn_max": 200}},
    "sampler": {"r_min": 0.2, "r_max": 0.4, "k": 50},
    "corpus_size": 10,
    "models": [{"kind": "transe", "dim": 8, "train": {"epochs": 10, "batch_size": 64}}],
    "stats": {"sobol": false},
    "master_seed": 5
}"#;

fn kgstructlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgstructlab")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path.to_string_lossy().into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn study_succeeds_and_report_rebuilds_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "study.json", SMALL);
    let out = dir.path().join("out");
    let out_s = out.to_string_lossy();
    let o = kgstructlab(&["study", "--config", &cfg, "--out", &out_s, "--workers", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let before = fs::read(out.join("report/records.csv")).unwrap();
    let manifest = fs::read(out.join("report/manifest.json")).unwrap();

    let o = kgstructlab(&["report", "--config", &cfg, "--out", &out_s]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(out.join("report/records.csv")).unwrap(), before);
    assert_eq!(fs::read(out.join("report/manifest.json")).unwrap(), manifest);
}

#[test]
fn stage_commands_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "study.json", SMALL);
    let out = dir.path().join("out");
    let out_s = out.to_string_lossy();
    for (cmd, file) in [
        ("sample", "samples"),
        ("featurize", "features.csv"),
        ("train", "experiments"),
        ("eval", "records.csv"),
        ("correlate", "correlation.csv"),
    ] {
        let o = kgstructlab(&[cmd, "--config", &cfg, "--out", &out_s]);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join(file).exists(), "{cmd} did not write {file}");
    }
    let header = fs::read_to_string(out.join("correlation.csv")).unwrap();
    assert!(header.starts_with("feature,method,transe\n"));
}

#[test]
fn invalid_configs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out_s = out.to_string_lossy();

    let typo = write_config(dir.path(), "typo.json", &SMALL.replace("corpus_size", "corpus_sise"));
    let o = kgstructlab(&["study", "--config", &typo, "--out", &out_s]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));

    let small = SMALL.replace(r#""corpus_size": 10"#, r#""corpus_size": 5"#).replace(r#""sobol": false"#, r#""correlation": false"#);
    let small = write_config(dir.path(), "small.json", &small);
    let o = kgstructlab(&["sobol", "--config", &small, "--out", &out_s]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("insufficient records for surrogate"));

    let missing = dir.path().join("absent.json");
    let o = kgstructlab(&["study", "--config", &missing.to_string_lossy(), "--out", &out_s]);
    assert_eq!(code(&o), 1);

    let o = kgstructlab(&["study", "--config", &write_config(dir.path(), "ok.json", SMALL)]);
    assert_eq!(code(&o), 1, "no output directory given");
}

#[test]
fn aggregate_stage_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "study.json", SMALL);
    let out = dir.path().join("fresh");
    // nothing trained yet: reuse-only stages have nothing to aggregate
    let o = kgstructlab(&["correlate", "--config", &cfg, "--out", &out.to_string_lossy()]);
    assert_eq!(code(&o), 2);
    let o = kgstructlab(&["report", "--config", &cfg, "--out", &out.to_string_lossy()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn seed_flag_changes_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "study.json", SMALL);
    let run = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        let o = kgstructlab(&["featurize", "--config", &cfg, "--out", &out.to_string_lossy(), "--seed", seed]);
        assert_eq!(code(&o), 0);
        fs::read(out.join("features.csv")).unwrap()
    };
    assert_eq!(run("1", "a"), run("1", "b"));
    assert_ne!(run("1", "c"), run("2", "d"));
}

//! Report-bundle contracts on a small two-model study.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use kgstructlab::features::FEATURE_NAMES;
use kgstructlab::pipeline::{
    correlation_csv, read_records_csv, run_study, Study, StudyConfig, StudyReport, REPORT_DIR,
};
use kgstructlab::stats::correlation_table;
use kgstructlab::Error;
use serde_json::Value;
use tempfile::TempDir;

const TWO_MODELS: &str = r#"{
    "dataset": {"synthetic": {"communities": 3, "community_size": 40, "nn_max": 200}},
    "sampler": {"r_min": 0.2, "r_max": 0.4, "k": 50},
    "corpus_size": 10,
    "models": [
        {"kind": "transe", "dim": 8, "train": {"epochs": 10, "batch_size": 64}},
        {"kind": "complex", "dim": 8, "train": {"epochs": 10, "batch_size": 64}}
    ],
    "stats": {"sobol": false},
    "master_seed": 3
}"#;

struct Run {
    dir: TempDir,
    report: StudyReport,
}

fn run(json: &str) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let cfg = StudyConfig::from_json(json).unwrap();
    let study = Study::open(cfg, Path::new("."), dir.path().to_path_buf()).unwrap();
    let report = run_study(&study).unwrap();
    Run { dir, report }
}

fn two_models() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| run(TWO_MODELS))
}

fn report_path(r: &Run, name: &str) -> std::path::PathBuf {
    r.dir.path().join(REPORT_DIR).join(name)
}

fn manifest(r: &Run) -> Value {
    serde_json::from_slice(&fs::read(report_path(r, "manifest.json")).unwrap()).unwrap()
}

#[test]
fn every_feature_gets_a_plot_with_one_series_per_model() {
    let r = two_models();
    assert!(r.report.failed_stages().is_empty(), "{:?}", r.report.manifest.stages);
    let svgs: Vec<_> = fs::read_dir(r.dir.path().join(REPORT_DIR))
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension().is_some_and(|x| x == "svg")).then_some(p)
        })
        .collect();
    assert_eq!(svgs.len(), FEATURE_NAMES.len());
    for f in FEATURE_NAMES {
        let svg = fs::read_to_string(report_path(r, &format!("scatter-{f}.svg"))).unwrap();
        assert_eq!(svg.matches(r#"class="series""#).count(), 2, "{f}");
    }
}

#[test]
fn correlation_recomputed_from_reloaded_records_is_bit_identical() {
    let r = two_models();
    let records = read_records_csv(&report_path(r, "records.csv")).unwrap();
    assert_eq!(records, r.report.records);
    let table = correlation_table(&records).unwrap();
    let bytes = correlation_csv(&table).unwrap();
    assert_eq!(bytes, fs::read(report_path(r, "correlation.csv")).unwrap());
}

#[test]
fn without_a_grid_fig5_is_absent_and_the_skip_is_recorded() {
    let r = two_models();
    assert!(!report_path(r, "fig5.csv").exists());
    let m = manifest(r);
    assert_eq!(m["stages"]["grid"]["status"], "skipped");
    assert!(m["stages"]["grid"]["reason"].as_str().unwrap().contains("grid"));
    assert!(m["stages"]["sobol"]["status"] == "skipped");
}

#[test]
fn manifest_lists_every_seed_and_file() {
    let r = two_models();
    let m = manifest(r);
    let seeds = &m["seeds"];
    let samples: Vec<u64> = seeds["samples"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    for s in &r.report.samples {
        assert!(samples.contains(&s.seed), "sample seed {} missing", s.seed);
    }
    let experiments = seeds["experiments"].as_array().unwrap();
    let usable = r.report.samples.iter().filter(|s| s.excluded.is_none()).count();
    assert_eq!(experiments.len(), 2 * usable);
    for e in experiments {
        assert!(e["seed"].as_u64().is_some() && e["init_seed"].as_u64().is_some());
    }
    let files: Vec<&str> = m["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    for f in ["features.csv", "records.csv", "correlation.csv", "fig4.csv", "report.json"] {
        assert!(files.contains(&f), "{f} not indexed");
    }
    assert!(m["config"].get("workers").is_none());
}

#[test]
fn grid_produces_fig5_and_lime_produces_fig6() {
    let json = r#"{
        "dataset": {"synthetic": {"communities": 3, "community_size": 40, "nn_max": 200}},
        "sampler": {"r_min": 0.2, "r_max": 0.4, "k": 50},
        "corpus_size": 4,
        "models": [{"kind": "transe", "dim": 8, "train": {"epochs": 10, "batch_size": 64}}],
        "grid": {"model": "transe", "epochs": [2, 4], "dims": [4, 8]},
        "lime": {"model": "transe", "max_per_group": 1, "config": {"num_perturbations": 200}},
        "stats": {"sobol": false, "correlation": false}
    }"#;
    let r = run(json);
    assert!(r.report.failed_stages().is_empty(), "{:?}", r.report.manifest.stages);
    let fig5 = fs::read_to_string(report_path(&r, "fig5.csv")).unwrap();
    assert!(fig5.starts_with("model,axis,value,category,mrr,test_triples\n"));
    assert!(fig5.lines().any(|l| l.contains(",epochs,4,")) && fig5.lines().any(|l| l.contains(",dim,8,")));
    let fig6 = fs::read_to_string(report_path(&r, "fig6.csv")).unwrap();
    assert!(fig6.lines().count() > 1);
    assert!(report_path(&r, "lime/triple-000.json").exists());
    assert!(!report_path(&r, "correlation.csv").exists());
}

#[test]
fn misspelled_config_keys_are_rejected() {
    let typo = TWO_MODELS.replace("corpus_size", "corpus_sise");
    assert!(matches!(StudyConfig::from_json(&typo), Err(Error::Config(_))));
    let nested = TWO_MODELS.replace(r#""r_min""#, r#""rmin""#);
    assert!(StudyConfig::from_json(&nested).is_err());
}

//! `kgstructlab`: run a structural-feature study, or any one of its stages,
//! from a JSON config.
//!
//! Exit codes: 0 on success, 1 when the config or dataset is invalid, 2 when
//! a stage fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kgstructlab::pipeline::{
    correlation_csv, emit_report, features_csv, fig6_csv, json_bytes, lime_files, records_csv, run_study, write_atomic,
    ExperimentMode, ExperimentStatus, StageStatus, Study, StudyConfig, REPORT_DIR,
};

#[derive(Parser, Debug)]
#[command(author, version, about = "Knowledge-graph structure vs link-prediction study toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Study config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides `workers` in the config.
    #[arg(long)]
    workers: Option<usize>,
    /// Master seed; overrides `master_seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw the subgraph corpus and write it as TSV splits under `samples/`.
    Sample(Common),
    /// Compute structural features of the corpus into `features.csv`.
    Featurize(Common),
    /// Train (or reuse) one model per usable sample and model kind.
    Train(Common),
    /// Evaluate trained models and write `records.csv`.
    Eval(Common),
    /// Correlate features with MRR into `correlation.csv`.
    Correlate(Common),
    /// Sobol indices of MRR over the features into `sobol.json`.
    Sobol(Common),
    /// LIME block-importance profiles into `fig6.csv` and `lime/`.
    Explain(Common),
    /// Run every stage and write the report bundle.
    Study(Common),
    /// Rebuild the report bundle from finished experiments without training.
    Report(Common),
}

/// A failure before any stage ran (exit 1).
#[derive(Debug)]
struct Invalid(anyhow::Error);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Invalid {}

fn open(c: &Common) -> Result<Study> {
    let prepare = || -> Result<Study> {
        let (mut cfg, base) =
            StudyConfig::load(&c.config).with_context(|| format!("loading {}", c.config.display()))?;
        if let Some(w) = c.workers {
            cfg.workers = w;
        }
        if let Some(s) = c.seed {
            cfg.master_seed = s;
        }
        let out = match (&c.out, &cfg.out_dir) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) if o.is_absolute() => o.clone(),
            (None, Some(o)) => base.join(o),
            (None, None) => bail!("no output directory: set out_dir in the config or pass --out"),
        };
        Ok(Study::open(cfg, &base, out)?)
    };
    prepare().map_err(|e| Invalid(e).into())
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_atomic(&path, bytes)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Fails unless `status` is ok.
fn require(stage: &str, status: &StageStatus) -> Result<()> {
    match status {
        StageStatus::Failed { error } => bail!("{stage} stage failed: {error}"),
        StageStatus::Skipped { reason } => bail!("{stage} stage skipped: {reason}"),
        StageStatus::Ok => Ok(()),
    }
}

fn experiments(study: &Study, mode: ExperimentMode) -> Result<Vec<kgstructlab::stats::ExperimentRecord>> {
    let samples = study.samples()?;
    let outcomes = study.experiments(&samples, mode);
    let count = |s: ExperimentStatus| outcomes.iter().filter(|o| o.status == s).count();
    println!(
        "{} experiments: {} trained, {} reused, {} failed",
        outcomes.len(),
        count(ExperimentStatus::Trained),
        count(ExperimentStatus::Reused),
        count(ExperimentStatus::Failed)
    );
    if !outcomes.is_empty() && count(ExperimentStatus::Failed) == outcomes.len() {
        bail!("every experiment failed");
    }
    Ok(Study::records(&samples, &outcomes))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Sample(c) => {
            let study = open(&c)?;
            let samples = study.samples()?;
            study.write_samples(&samples)?;
            let usable = samples.iter().filter(|s| s.graph.is_some()).count();
            println!("{} samples ({usable} usable) under {}", samples.len(), study.out_dir.join("samples").display());
        }
        Command::Featurize(c) => {
            let study = open(&c)?;
            let samples = study.samples()?;
            let infos: Vec<_> = samples.into_iter().map(|s| s.info).collect();
            write(&study.out_dir, "features.csv", &features_csv(&infos)?)?;
        }
        Command::Train(c) => {
            let study = open(&c)?;
            experiments(&study, ExperimentMode::Train)?;
        }
        Command::Eval(c) => {
            let study = open(&c)?;
            let records = experiments(&study, ExperimentMode::ReuseOnly)?;
            write(&study.out_dir, "records.csv", &records_csv(&records)?)?;
        }
        Command::Correlate(c) => {
            let study = open(&c)?;
            let records = experiments(&study, ExperimentMode::ReuseOnly)?;
            let (table, status) = study.correlation(&records);
            require("correlation", &status)?;
            write(&study.out_dir, "correlation.csv", &correlation_csv(&table.expect("ok status"))?)?;
        }
        Command::Sobol(c) => {
            let study = open(&c)?;
            let records = experiments(&study, ExperimentMode::ReuseOnly)?;
            let (res, status) = study.sobol(&records);
            require("sobol", &status)?;
            write(&study.out_dir, "sobol.json", &json_bytes(&res)?)?;
        }
        Command::Explain(c) => {
            let study = open(&c)?;
            let (profile, status) = study.explain(ExperimentMode::TrainAndEval);
            require("explain", &status)?;
            let profile = profile.expect("ok status");
            write(&study.out_dir, "fig6.csv", &fig6_csv(&profile)?)?;
            for (name, bytes) in lime_files(&profile)? {
                write(&study.out_dir, &name, &bytes)?;
            }
        }
        Command::Study(c) => {
            let study = open(&c)?;
            let report = run_study(&study)?;
            finish(&study, &report.failed_stages(), &report.manifest.stages)?;
        }
        Command::Report(c) => {
            let study = open(&c)?;
            let report = study.run(ExperimentMode::ReuseOnly)?;
            emit_report(&report, &study.out_dir)?;
            study.write_run_log()?;
            finish(&study, &report.failed_stages(), &report.manifest.stages)?;
        }
    }
    Ok(())
}

fn finish(
    study: &Study,
    failed: &[&str],
    stages: &std::collections::BTreeMap<String, StageStatus>,
) -> Result<()> {
    for (name, s) in stages {
        match s {
            StageStatus::Ok => println!("{name}: ok"),
            StageStatus::Skipped { reason } => println!("{name}: skipped ({reason})"),
            StageStatus::Failed { error } => println!("{name}: FAILED ({error})"),
        }
    }
    println!("report written to {}", study.out_dir.join(REPORT_DIR).display());
    if !failed.is_empty() {
        bail!("failed stage(s): {}", failed.join(", "));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

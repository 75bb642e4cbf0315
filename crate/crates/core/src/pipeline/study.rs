//! Study orchestration: corpus sampling, per-experiment training and
//! evaluation with on-disk resume, and the aggregate stages.
//!
//! Experiment `(sample i, kind)` lives in `experiments/sample-iii/<kind>/`:
//! `model.ckpt` + `model.json` (checkpoint and sidecar), `train.json` written
//! after the checkpoint, and `eval.json`. The JSON files carry a key hashing
//! everything that determines the result, so a finished experiment is reused
//! only when nothing it depends on has changed, and a run interrupted between
//! training and evaluation does not retrain.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ModelSpec, StudyConfig};
use super::write_atomic;
use crate::error::{Error, Result};
use crate::explain::{category_importance_profile, ImportanceProfile, LimeConfig};
use crate::features::{category_distribution, classify_relations, compute_features, RelationCategory, StructuralFeatures};
use crate::graph::{KnowledgeGraph, LoadReport, Split, SubgraphSample};
use crate::kge::{
    evaluate_by_category, hyperparam_grid, load_checkpoint, save_checkpoint, train, EmbeddingModel, EvalReport,
    GridRow, ModelKind, TrainConfig,
};
use crate::sampler::generate_corpus;
use crate::seed::{derive_seed, label_key, rng_from_seed};
use crate::stats::{
    correlation_table, records_by_model, sobol_over_records, CorrelationTable, ExperimentRecord, SobolConfig,
    SobolResult,
};

pub fn corpus_seed(master: u64) -> u64 {
    derive_seed(master, &[label_key("corpus")])
}

/// Seed of experiment `(sample, kind)`; independent of the other models.
pub fn experiment_seed(master: u64, sample: usize, kind: ModelKind) -> u64 {
    derive_seed(master, &[sample as u64, label_key(kind.name())])
}

pub fn init_seed(experiment_seed: u64) -> u64 {
    derive_seed(experiment_seed, &[label_key("init")])
}

/// Seed of the model trained on the parent graph for the LIME stage.
pub fn full_model_seed(master: u64, kind: ModelKind) -> u64 {
    derive_seed(master, &[label_key("full"), label_key(kind.name())])
}

pub fn sobol_seed(master: u64, kind: ModelKind) -> u64 {
    derive_seed(master, &[label_key("sobol"), label_key(kind.name())])
}

pub fn grid_seed(master: u64, kind: ModelKind) -> u64 {
    derive_seed(master, &[label_key("grid"), label_key(kind.name())])
}

pub fn lime_seed(master: u64) -> u64 {
    derive_seed(master, &[label_key("lime")])
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// SHA-256 over vocabularies and the triples of every split.
pub fn graph_digest(graph: &KnowledgeGraph) -> String {
    let mut h = Sha256::new();
    for vocab in [graph.entities(), graph.relations()] {
        for l in vocab.labels() {
            h.update(l.as_bytes());
            h.update(b"\n");
        }
        h.update(b"\x00");
    }
    for s in Split::ALL {
        for t in graph.split(s) {
            h.update(t.head.to_le_bytes());
            h.update(t.relation.to_le_bytes());
            h.update(t.tail.to_le_bytes());
        }
        h.update(b"\x00");
    }
    hex(&h.finalize())
}

/// Outcome of one stage in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Skipped { reason: String },
    Failed { error: String },
}

impl StageStatus {
    pub fn is_failed(&self) -> bool {
        matches!(self, StageStatus::Failed { .. })
    }
}

/// A drawn sample, its features, and the materialized graph when usable.
#[derive(Debug, Clone)]
pub struct SampleEntry {
    pub info: SampleInfo,
    pub sample: SubgraphSample,
    pub graph: Option<KnowledgeGraph>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleInfo {
    pub index: usize,
    pub seed: u64,
    pub nodes: usize,
    pub triples: BTreeMap<Split, usize>,
    pub requested_ratio: f64,
    pub achieved_ratio: f64,
    pub exhausted: bool,
    /// Why the sample was excluded from training, if it was.
    pub excluded: Option<String>,
    pub features: Option<StructuralFeatures>,
    /// Train-triple counts per category, in (1-1, 1-n, n-1, n-n) order.
    pub category_counts: Option<[u64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentStatus {
    Trained,
    Reused,
    Failed,
}

/// Contents of `train.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub key: String,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: Option<f64>,
}

/// Contents of `eval.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub key: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub sample_index: usize,
    pub kind: ModelKind,
    pub seed: u64,
    pub status: ExperimentStatus,
    pub result: std::result::Result<EvalReport, String>,
    pub seconds: f64,
}

/// How far the experiment stage goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentMode {
    /// Train (or reuse) checkpoints only.
    Train,
    /// Train where needed, then evaluate.
    TrainAndEval,
    /// Only reuse what is on disk; missing experiments fail.
    ReuseOnly,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunLog {
    pub workers: usize,
    pub out_dir: PathBuf,
    pub stages: Vec<(String, f64)>,
    pub experiments: Vec<ExperimentLogEntry>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentLogEntry {
    pub sample: Option<usize>,
    pub model: ModelKind,
    pub status: ExperimentStatus,
    pub seconds: f64,
}

/// Per-category pooled test metrics over all successful experiments of a
/// model (the category-count / MRR figure).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub model: ModelKind,
    pub category: RelationCategory,
    pub train_triples: u64,
    pub test_triples: usize,
    pub mrr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSeed {
    /// `None` for the model trained on the parent graph.
    pub sample: Option<usize>,
    pub model: ModelKind,
    pub seed: u64,
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub corpus: u64,
    pub samples: Vec<u64>,
    pub experiments: Vec<ExperimentSeed>,
    pub sobol: BTreeMap<ModelKind, u64>,
    pub grid: Option<u64>,
    pub lime_model: Option<ExperimentSeed>,
    /// Base of the per-triple perturbation seeds (each recorded in its
    /// explanation file).
    pub lime: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedExperiment {
    pub sample: usize,
    pub model: ModelKind,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub digest: String,
    pub entities: usize,
    pub relations: usize,
    pub triples: BTreeMap<Split, usize>,
    pub load: Option<LoadReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// The config as run, without `workers` and `out_dir`.
    pub config: serde_json::Value,
    pub dataset: DatasetSummary,
    pub seeds: Seeds,
    pub excluded_samples: Vec<(usize, String)>,
    pub failed_experiments: Vec<FailedExperiment>,
    pub stages: BTreeMap<String, StageStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub manifest: Manifest,
    pub samples: Vec<SampleInfo>,
    pub records: Vec<ExperimentRecord>,
    pub correlation: Option<CorrelationTable>,
    pub sobol: BTreeMap<ModelKind, SobolResult>,
    pub categories: Vec<CategoryRow>,
    pub grid: Option<Vec<GridRow>>,
    pub lime: Option<ImportanceProfile>,
}

impl StudyReport {
    /// Names of failed aggregate stages.
    pub fn failed_stages(&self) -> Vec<&str> {
        self.manifest
            .stages
            .iter()
            .filter(|(_, s)| s.is_failed())
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

pub struct Study {
    pub config: StudyConfig,
    pub out_dir: PathBuf,
    pub graph: KnowledgeGraph,
    pub load_report: Option<LoadReport>,
    pool: rayon::ThreadPool,
    log: Mutex<RunLog>,
    started: Instant,
}

fn exp_dir_name(sample: usize) -> String {
    format!("sample-{sample:03}")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Option<T> {
    let bytes = fs::read(path).ok()?;
    match serde_json::from_slice(&bytes) {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("ignoring unreadable {}: {e}", path.display());
            None
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

#[derive(Serialize)]
struct ExperimentKey<'a> {
    kind: ModelKind,
    dim: usize,
    train: &'a TrainConfig,
    init_seed: u64,
    graph: &'a str,
}

/// Location, inputs and key of one training job.
struct Job<'a> {
    dir: PathBuf,
    kind: ModelKind,
    dim: usize,
    train: TrainConfig,
    init_seed: u64,
    graph: &'a KnowledgeGraph,
    key: String,
}

impl<'a> Job<'a> {
    fn new(dir: PathBuf, spec: &ModelSpec, seed: u64, graph: &'a KnowledgeGraph) -> Self {
        let train = TrainConfig { seed, ..spec.train.clone() };
        let init_seed = init_seed(seed);
        let digest = graph_digest(graph);
        let key = sha256_hex(
            &serde_json::to_vec(&ExperimentKey {
                kind: spec.kind,
                dim: spec.dim,
                train: &train,
                init_seed,
                graph: &digest,
            })
            .expect("key serializes"),
        );
        Self {
            dir,
            kind: spec.kind,
            dim: spec.dim,
            train,
            init_seed,
            graph,
            key,
        }
    }

    fn ckpt(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }

    /// The trained model, from disk when a matching checkpoint exists.
    fn model(&self, allow_training: bool) -> Result<(EmbeddingModel, bool)> {
        let rec: Option<TrainRecord> = read_json(&self.dir.join("train.json"));
        if rec.is_some_and(|r| r.key == self.key) {
            match load_checkpoint(&self.ckpt(), Some(self.graph)) {
                Ok((m, side)) if side.config == self.train && side.dim == self.dim && side.kind == self.kind => {
                    return Ok((m, false))
                }
                Ok(_) => log::warn!("checkpoint in {} does not match its record; retraining", self.dir.display()),
                Err(e) => log::warn!("checkpoint in {} unusable ({e}); retraining", self.dir.display()),
            }
        }
        if !allow_training {
            return Err(Error::domain(format!(
                "no finished training in {}; run the train or study command first",
                self.dir.display()
            )));
        }
        let g = self.graph;
        let model = EmbeddingModel::init(
            self.kind,
            self.dim,
            g.num_entities(),
            g.num_relations(),
            &mut rng_from_seed(self.init_seed),
        )?;
        let out = train(model, g, &self.train)?;
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        save_checkpoint(&self.ckpt(), &out.model, &self.train, g)?;
        write_json(
            &self.dir.join("train.json"),
            &TrainRecord {
                key: self.key.clone(),
                seed: self.train.seed,
                epochs: self.train.epochs,
                final_loss: out.loss_trace.last().copied(),
            },
        )?;
        Ok((out.model, true))
    }

    /// Test-split evaluation by category, from disk when possible.
    fn evaluate(&self, threshold: f64, allow_training: bool) -> Result<(EvalReport, bool)> {
        let rec: Option<EvalRecord> = read_json(&self.dir.join("eval.json"));
        if let Some(r) = rec.filter(|r| r.key == self.key) {
            return Ok((r.report, false));
        }
        let (model, trained) = self.model(allow_training)?;
        let cats = classify_relations(self.graph, threshold)?;
        let report = evaluate_by_category(&model, self.graph, Split::Test, &cats)?;
        write_json(
            &self.dir.join("eval.json"),
            &EvalRecord {
                key: self.key.clone(),
                report: report.clone(),
            },
        )?;
        Ok((report, trained))
    }
}

impl Study {
    /// Loads the dataset and prepares `out_dir`. `base_dir` anchors relative
    /// dataset paths.
    pub fn open(config: StudyConfig, base_dir: &Path, out_dir: PathBuf) -> Result<Self> {
        config.validate()?;
        fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        let (graph, load_report) = config.dataset.load(base_dir)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", config.workers)))?;
        let log = Mutex::new(RunLog {
            workers: config.workers,
            out_dir: out_dir.clone(),
            ..Default::default()
        });
        Ok(Self {
            config,
            out_dir,
            graph,
            load_report,
            pool,
            log,
            started: Instant::now(),
        })
    }

    fn timed<T>(&self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.log.lock().expect("log lock").stages.push((stage.to_owned(), t.elapsed().as_secs_f64()));
        out
    }

    fn master(&self) -> u64 {
        self.config.master_seed
    }

    /// Draws the corpus and computes features of the usable samples.
    pub fn samples(&self) -> Result<Vec<SampleEntry>> {
        self.timed("sample", || {
            let corpus = self.pool.install(|| {
                generate_corpus(&self.graph, self.config.corpus_size, &self.config.sampler, corpus_seed(self.master()))
            })?;
            let threshold = self.config.category_threshold;
            let entries: Vec<SampleEntry> = self.pool.install(|| {
                corpus
                    .into_par_iter()
                    .enumerate()
                    .map(|(index, sample)| {
                        let mut info = SampleInfo {
                            index,
                            seed: sample.meta.seed.expect("corpus samples carry their seed"),
                            nodes: sample.nodes.len(),
                            triples: sample.triples_per_split(),
                            requested_ratio: sample.meta.requested_ratio,
                            achieved_ratio: sample.meta.achieved_ratio,
                            exhausted: sample.meta.exhausted,
                            excluded: sample.unusable_reason(),
                            features: None,
                            category_counts: None,
                        };
                        let mut graph = None;
                        if info.excluded.is_none() {
                            let g = sample.to_graph(&self.graph);
                            match compute_features(&g, threshold) {
                                Ok(f) => {
                                    info.features = Some(f);
                                    let cats = classify_relations(&g, threshold).expect("features classified it");
                                    info.category_counts = Some(category_distribution(&g, &cats));
                                    graph = Some(g);
                                }
                                Err(e) => info.excluded = Some(format!("features failed: {e}")),
                            }
                        }
                        if let Some(r) = &info.excluded {
                            log::warn!("sample {index} excluded: {r}");
                        }
                        SampleEntry { info, sample, graph }
                    })
                    .collect()
            });
            Ok(entries)
        })
    }

    /// Writes every sample as TSV splits plus `sample.json` under
    /// `samples/sample-iii/`, with ids mapped back to parent labels.
    pub fn write_samples(&self, samples: &[SampleEntry]) -> Result<()> {
        for s in samples {
            let dir = self.out_dir.join("samples").join(exp_dir_name(s.info.index));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            s.sample.to_graph(&self.graph).write_tsv(&dir)?;
            write_json(&dir.join("sample.json"), &s.info)?;
        }
        Ok(())
    }

    /// Trains and/or evaluates every (usable sample, model) pair on the
    /// worker pool. Outcomes come back in (sample, model) order.
    pub fn experiments(&self, samples: &[SampleEntry], mode: ExperimentMode) -> Vec<ExperimentOutcome> {
        let jobs: Vec<(usize, &ModelSpec, &KnowledgeGraph)> = samples
            .iter()
            .filter_map(|s| s.graph.as_ref().map(|g| (s.info.index, g)))
            .flat_map(|(i, g)| self.config.models.iter().map(move |m| (i, m, g)))
            .collect();
        let allow = mode != ExperimentMode::ReuseOnly;
        let threshold = self.config.category_threshold;
        let outcomes: Vec<ExperimentOutcome> = self.timed("experiments", || {
            self.pool.install(|| {
                jobs.par_iter()
                    .map(|&(i, spec, g)| {
                        let t = Instant::now();
                        let seed = experiment_seed(self.master(), i, spec.kind);
                        let dir = self.out_dir.join("experiments").join(exp_dir_name(i)).join(spec.kind.name());
                        let job = Job::new(dir, spec, seed, g);
                        let res = match mode {
                            ExperimentMode::Train => job.model(true).map(|(_, fresh)| (None, fresh)),
                            _ => job.evaluate(threshold, allow).map(|(r, fresh)| (Some(r), fresh)),
                        };
                        let (status, result) = match res {
                            Ok((r, fresh)) => (
                                if fresh { ExperimentStatus::Trained } else { ExperimentStatus::Reused },
                                Ok(r),
                            ),
                            Err(e) => {
                                log::error!("experiment sample {i} / {}: {e}", spec.kind);
                                (ExperimentStatus::Failed, Err(e.to_string()))
                            }
                        };
                        (i, spec.kind, seed, status, result, t.elapsed().as_secs_f64())
                    })
                    .collect::<Vec<_>>()
            })
            .into_iter()
            .map(|(sample_index, kind, seed, status, result, seconds)| ExperimentOutcome {
                sample_index,
                kind,
                seed,
                status,
                result: result.and_then(|r| r.ok_or_else(|| "not evaluated".to_owned())),
                seconds,
            })
            .collect()
        });
        let mut log = self.log.lock().expect("log lock");
        for o in &outcomes {
            log.experiments.push(ExperimentLogEntry {
                sample: Some(o.sample_index),
                model: o.kind,
                status: o.status,
                seconds: o.seconds,
            });
        }
        outcomes
    }

    pub fn correlation(&self, records: &[ExperimentRecord]) -> (Option<CorrelationTable>, StageStatus) {
        if !self.config.stats.correlation {
            return (None, StageStatus::Skipped { reason: "disabled in config".into() });
        }
        self.timed("correlation", || match correlation_table(records) {
            Ok(t) => (Some(t), StageStatus::Ok),
            Err(e) => (None, StageStatus::Failed { error: e.to_string() }),
        })
    }

    pub fn sobol(&self, records: &[ExperimentRecord]) -> (BTreeMap<ModelKind, SobolResult>, StageStatus) {
        if !self.config.stats.sobol {
            return (BTreeMap::new(), StageStatus::Skipped { reason: "disabled in config".into() });
        }
        self.timed("sobol", || {
            let groups = records_by_model(records);
            let mut out = BTreeMap::new();
            let mut errors = Vec::new();
            for spec in &self.config.models {
                let recs = groups.get(&spec.kind).map(Vec::as_slice).unwrap_or(&[]);
                let cfg = SobolConfig { seed: sobol_seed(self.master(), spec.kind), ..self.config.stats.sobol_config.clone() };
                match self.pool.install(|| sobol_over_records(recs, &cfg, &self.config.stats.surrogate)) {
                    Ok(r) => {
                        out.insert(spec.kind, r);
                    }
                    Err(e) => errors.push(format!("{}: {e}", spec.kind)),
                }
            }
            let status = if errors.is_empty() {
                StageStatus::Ok
            } else {
                StageStatus::Failed { error: errors.join("; ") }
            };
            (out, status)
        })
    }

    /// Epoch and dimension sweeps on the parent graph, cached under
    /// `experiments/grid/`.
    pub fn grid(&self, mode: ExperimentMode) -> (Option<Vec<GridRow>>, StageStatus) {
        let Some(spec) = &self.config.grid else {
            return (None, StageStatus::Skipped { reason: "no grid configured".into() });
        };
        let model = self.config.model(spec.model).expect("validated");
        self.timed("grid", || {
            let base = TrainConfig { seed: grid_seed(self.master(), spec.model), ..model.train.clone() };
            let key = sha256_hex(
                &serde_json::to_vec(&(spec, &base, model.dim, graph_digest(&self.graph), self.config.category_threshold))
                    .expect("key serializes"),
            );
            let path = self.out_dir.join("experiments").join("grid").join(format!("{}.json", spec.model.name()));
            #[derive(Serialize, Deserialize)]
            struct Cached {
                key: String,
                rows: Vec<GridRow>,
            }
            if let Some(c) = read_json::<Cached>(&path).filter(|c| c.key == key) {
                return (Some(c.rows), StageStatus::Ok);
            }
            if mode == ExperimentMode::ReuseOnly {
                return (None, StageStatus::Failed { error: "grid results missing; run the study first".into() });
            }
            let res = classify_relations(&self.graph, self.config.category_threshold).and_then(|cats| {
                self.pool.install(|| hyperparam_grid(&self.graph, spec.model, &spec.epochs, &spec.dims, &base, model.dim, &cats))
            });
            match res.and_then(|rows| {
                fs::create_dir_all(path.parent().expect("has parent")).map_err(|e| Error::io(&path, e))?;
                write_json(&path, &Cached { key, rows: rows.clone() })?;
                Ok(rows)
            }) {
                Ok(rows) => (Some(rows), StageStatus::Ok),
                Err(e) => (None, StageStatus::Failed { error: e.to_string() }),
            }
        })
    }

    /// LIME profile of a model trained on the parent graph.
    pub fn explain(&self, mode: ExperimentMode) -> (Option<ImportanceProfile>, StageStatus) {
        let Some(spec) = &self.config.lime else {
            return (None, StageStatus::Skipped { reason: "no lime stage configured".into() });
        };
        let model_spec = self.config.model(spec.model).expect("validated");
        self.timed("explain", || {
            let t = Instant::now();
            let dir = self.out_dir.join("experiments").join("full").join(spec.model.name());
            let job = Job::new(dir, model_spec, full_model_seed(self.master(), spec.model), &self.graph);
            let trained = job.model(mode != ExperimentMode::ReuseOnly);
            self.log.lock().expect("log lock").experiments.push(ExperimentLogEntry {
                sample: None,
                model: spec.model,
                status: match &trained {
                    Ok((_, true)) => ExperimentStatus::Trained,
                    Ok((_, false)) => ExperimentStatus::Reused,
                    Err(_) => ExperimentStatus::Failed,
                },
                seconds: t.elapsed().as_secs_f64(),
            });
            let cfg = LimeConfig { seed: lime_seed(self.master()), ..spec.config.clone() };
            let res = trained.and_then(|(model, _)| {
                let cats = classify_relations(&self.graph, self.config.category_threshold)?;
                self.pool.install(|| {
                    category_importance_profile(&model, &self.graph, &cats, spec.quantile, spec.max_per_group, &cfg)
                })
            });
            match res {
                Ok(p) => (Some(p), StageStatus::Ok),
                Err(e) => (None, StageStatus::Failed { error: e.to_string() }),
            }
        })
    }

    /// Records of the successful experiments, in (sample, model) order.
    pub fn records(samples: &[SampleEntry], outcomes: &[ExperimentOutcome]) -> Vec<ExperimentRecord> {
        outcomes
            .iter()
            .filter_map(|o| {
                let r = o.result.as_ref().ok()?;
                let features = samples[o.sample_index].info.features?;
                Some(ExperimentRecord {
                    sample_index: o.sample_index,
                    model: o.kind,
                    features,
                    mrr: r.overall.mrr,
                })
            })
            .collect()
    }

    fn category_rows(&self, samples: &[SampleEntry], outcomes: &[ExperimentOutcome]) -> Vec<CategoryRow> {
        let mut train_counts = [0u64; 4];
        for s in samples {
            if let Some(c) = s.info.category_counts {
                for k in 0..4 {
                    train_counts[k] += c[k];
                }
            }
        }
        let mut rows = Vec::new();
        for spec in &self.config.models {
            for c in RelationCategory::ALL {
                let (mut rr, mut n) = (0.0, 0usize);
                for o in outcomes.iter().filter(|o| o.kind == spec.kind) {
                    if let Some(m) = o.result.as_ref().ok().and_then(|r| r.per_category.get(&c)) {
                        rr += m.mrr * m.count as f64;
                        n += m.count;
                    }
                }
                rows.push(CategoryRow {
                    model: spec.kind,
                    category: c,
                    train_triples: train_counts[c.index()],
                    test_triples: n,
                    mrr: (n > 0).then(|| rr / n as f64),
                });
            }
        }
        rows
    }

    fn manifest(&self, samples: &[SampleEntry], outcomes: &[ExperimentOutcome], stages: BTreeMap<String, StageStatus>) -> Manifest {
        let mut config = serde_json::to_value(&self.config).expect("config serializes");
        if let Some(obj) = config.as_object_mut() {
            obj.remove("workers");
            obj.remove("out_dir");
        }
        let master = self.master();
        let seeds = Seeds {
            master,
            corpus: corpus_seed(master),
            samples: samples.iter().map(|s| s.info.seed).collect(),
            experiments: outcomes
                .iter()
                .map(|o| ExperimentSeed {
                    sample: Some(o.sample_index),
                    model: o.kind,
                    seed: o.seed,
                    init_seed: init_seed(o.seed),
                })
                .collect(),
            sobol: if self.config.stats.sobol {
                self.config.models.iter().map(|m| (m.kind, sobol_seed(master, m.kind))).collect()
            } else {
                BTreeMap::new()
            },
            grid: self.config.grid.as_ref().map(|g| grid_seed(master, g.model)),
            lime_model: self.config.lime.as_ref().map(|l| {
                let seed = full_model_seed(master, l.model);
                ExperimentSeed {
                    sample: None,
                    model: l.model,
                    seed,
                    init_seed: init_seed(seed),
                }
            }),
            lime: self.config.lime.as_ref().map(|_| lime_seed(master)),
        };
        Manifest {
            tool: "kgstructlab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
            dataset: DatasetSummary {
                digest: graph_digest(&self.graph),
                entities: self.graph.num_entities(),
                relations: self.graph.num_relations(),
                triples: Split::ALL.iter().map(|&s| (s, self.graph.split(s).len())).collect(),
                load: self.load_report.clone(),
            },
            seeds,
            excluded_samples: samples
                .iter()
                .filter_map(|s| s.info.excluded.clone().map(|r| (s.info.index, r)))
                .collect(),
            failed_experiments: outcomes
                .iter()
                .filter_map(|o| {
                    o.result.as_ref().err().map(|e| FailedExperiment {
                        sample: o.sample_index,
                        model: o.kind,
                        error: e.clone(),
                    })
                })
                .collect(),
            stages,
        }
    }

    /// Runs every stage and assembles the report (without writing it).
    pub fn run(&self, mode: ExperimentMode) -> Result<StudyReport> {
        let samples = self.samples()?;
        let outcomes = self.experiments(&samples, mode);
        let records = Self::records(&samples, &outcomes);
        let mut stages = BTreeMap::new();
        let usable = samples.iter().filter(|s| s.graph.is_some()).count();
        stages.insert(
            "sample".to_owned(),
            if usable == 0 {
                StageStatus::Failed { error: "no usable samples".into() }
            } else {
                StageStatus::Ok
            },
        );
        let failed = outcomes.iter().filter(|o| o.result.is_err()).count();
        stages.insert(
            "experiments".to_owned(),
            if records.is_empty() {
                StageStatus::Failed { error: format!("no successful experiments ({failed} failed)") }
            } else {
                StageStatus::Ok
            },
        );
        let (correlation, s) = self.correlation(&records);
        stages.insert("correlation".into(), s);
        let (sobol, s) = self.sobol(&records);
        stages.insert("sobol".into(), s);
        let (grid, s) = self.grid(mode);
        stages.insert("grid".into(), s);
        let (lime, s) = self.explain(mode);
        stages.insert("explain".into(), s);
        let categories = self.category_rows(&samples, &outcomes);
        Ok(StudyReport {
            manifest: self.manifest(&samples, &outcomes, stages),
            samples: samples.into_iter().map(|s| s.info).collect(),
            records,
            correlation,
            sobol,
            categories,
            grid,
            lime,
        })
    }

    /// Writes `run_log.json` (wall times and reuse counts) next to the report.
    pub fn write_run_log(&self) -> Result<()> {
        let mut log = self.log.lock().expect("log lock").clone();
        log.total_seconds = self.started.elapsed().as_secs_f64();
        write_json(&self.out_dir.join("run_log.json"), &log)
    }

    pub fn run_log(&self) -> RunLog {
        self.log.lock().expect("log lock").clone()
    }
}

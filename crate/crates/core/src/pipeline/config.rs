//! Study configuration: one JSON document, unknown keys rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::LimeConfig;
use crate::features::DEFAULT_CATEGORY_THRESHOLD;
use crate::graph::{load_graph, KnowledgeGraph, LoadReport};
use crate::kge::{ModelKind, TrainConfig};
use crate::sampler::SamplerParams;
use crate::stats::correlation::MIN_CORRELATION_RECORDS;
use crate::stats::surrogate::{FULL_MIN_RECORDS, SEPARABLE_MIN_RECORDS};
use crate::stats::{SobolConfig, SurrogateConfig, SurrogateOrder};
use crate::synthetic::{category_family, CategoryFamilyParams};

/// Where the parent graph comes from. Relative paths are resolved against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// A directory holding `train.txt`, `valid.txt` and `test.txt`.
    Dir(PathBuf),
    Files {
        train: PathBuf,
        valid: PathBuf,
        test: PathBuf,
    },
    Synthetic(CategoryFamilyParams),
}

impl DatasetSpec {
    pub fn load(&self, base: &Path) -> Result<(KnowledgeGraph, Option<LoadReport>)> {
        let abs = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        match self {
            DatasetSpec::Dir(d) => {
                let d = abs(d);
                load_graph(&d.join("train.txt"), &d.join("valid.txt"), &d.join("test.txt")).map(|(g, r)| (g, Some(r)))
            }
            DatasetSpec::Files { train, valid, test } => {
                load_graph(&abs(train), &abs(valid), &abs(test)).map(|(g, r)| (g, Some(r)))
            }
            DatasetSpec::Synthetic(p) => Ok((category_family(p), None)),
        }
    }
}

fn default_dim() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// `seed` is replaced by the derived per-experiment seed.
    #[serde(default)]
    pub train: TrainConfig,
}

/// Epoch and dimension sweeps on the parent graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub model: ModelKind,
    pub epochs: Vec<usize>,
    pub dims: Vec<usize>,
}

fn default_quantile() -> f64 {
    0.1
}

fn default_max_per_group() -> Option<usize> {
    Some(5)
}

/// LIME profiles of a model trained on the parent graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimeSpec {
    pub model: ModelKind,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    /// `null` explains every representative.
    #[serde(default = "default_max_per_group")]
    pub max_per_group: Option<usize>,
    /// `seed` is replaced by a seed derived from the master seed.
    #[serde(default)]
    pub config: LimeConfig,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsOptions {
    #[serde(default = "yes")]
    pub correlation: bool,
    #[serde(default = "yes")]
    pub sobol: bool,
    /// `seed` is replaced by a seed derived from the master seed.
    #[serde(default)]
    pub sobol_config: SobolConfig,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
}

impl Default for StatsOptions {
    fn default() -> Self {
        Self {
            correlation: true,
            sobol: true,
            sobol_config: SobolConfig::default(),
            surrogate: SurrogateConfig::default(),
        }
    }
}

fn default_threshold() -> f64 {
    DEFAULT_CATEGORY_THRESHOLD
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub sampler: SamplerParams,
    pub corpus_size: usize,
    #[serde(default = "default_threshold")]
    pub category_threshold: f64,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub lime: Option<LimeSpec>,
    #[serde(default)]
    pub stats: StatsOptions,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and validates a config file; returns it with the directory
    /// relative dataset paths resolve against.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_json(&text)?;
        cfg.validate()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn model(&self, kind: ModelKind) -> Option<&ModelSpec> {
        self.models.iter().find(|m| m.kind == kind)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.sampler.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.corpus_size == 0 {
            return bad("corpus_size must be at least 1".into());
        }
        if !(self.category_threshold > 0.0 && self.category_threshold.is_finite()) {
            return bad("category_threshold must be positive".into());
        }
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        for (i, m) in self.models.iter().enumerate() {
            if self.models[..i].iter().any(|o| o.kind == m.kind) {
                return bad(format!("model {} is listed twice", m.kind));
            }
            if m.dim == 0 {
                return bad(format!("model {}: dim must be positive", m.kind));
            }
            m.train.validate().map_err(|e| Error::Config(format!("model {}: {e}", m.kind)))?;
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if let Some(g) = &self.grid {
            if self.model(g.model).is_none() {
                return bad(format!("grid model {} is not in models", g.model));
            }
            if g.epochs.is_empty() || g.dims.is_empty() || g.dims.contains(&0) {
                return bad("grid needs nonempty epoch and dimension lists with positive dims".into());
            }
        }
        if let Some(l) = &self.lime {
            if self.model(l.model).is_none() {
                return bad(format!("lime model {} is not in models", l.model));
            }
            if !(l.quantile > 0.0 && l.quantile <= 0.5) {
                return bad(format!("lime quantile must lie in (0, 0.5], got {}", l.quantile));
            }
            l.config.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.stats.correlation && self.corpus_size < MIN_CORRELATION_RECORDS {
            return Err(Error::InsufficientRecords {
                what: "correlation",
                have: self.corpus_size,
                need: MIN_CORRELATION_RECORDS,
            });
        }
        if self.stats.sobol {
            self.stats.sobol_config.validate().map_err(|e| Error::Config(e.to_string()))?;
            let need = match self.stats.surrogate.order {
                SurrogateOrder::Full => FULL_MIN_RECORDS,
                _ => SEPARABLE_MIN_RECORDS,
            };
            if self.corpus_size < need {
                return Err(Error::InsufficientRecords {
                    what: "surrogate",
                    have: self.corpus_size,
                    need,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"dataset": {"synthetic": {}}, "corpus_size": 20, "models": [{"kind": "transe"}]}"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = StudyConfig::from_json(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.models[0].dim, 32);
        assert_eq!(c.workers, 1);
        assert!(c.stats.sobol && c.grid.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let typo = MINIMAL.replace("corpus_size", "corpus_sise");
        assert!(matches!(StudyConfig::from_json(&typo), Err(Error::Config(_))));
        let nested = MINIMAL.replace(r#"{"kind": "transe"}"#, r#"{"kind": "transe", "train": {"epoch": 3}}"#);
        assert!(StudyConfig::from_json(&nested).is_err());
    }

    #[test]
    fn small_corpus_with_sobol_is_refused() {
        let mut c = StudyConfig::from_json(MINIMAL).unwrap();
        c.corpus_size = 12;
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("insufficient records for surrogate"), "{err}");
        c.stats.sobol = false;
        c.validate().unwrap();
        c.corpus_size = 5;
        assert!(c.validate().unwrap_err().to_string().contains("insufficient records for correlation"));
    }
}

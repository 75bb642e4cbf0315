//! Pearson and Spearman correlation between structural features and MRR.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{StructuralFeatures, FEATURE_NAMES};
use crate::kge::ModelKind;

/// Minimum records per model for a correlation table.
pub const MIN_CORRELATION_RECORDS: usize = 10;

/// One trained-and-evaluated experiment: a sample's features and its MRR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub sample_index: usize,
    pub model: ModelKind,
    pub features: StructuralFeatures,
    pub mrr: f64,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::domain(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::domain(format!("correlation needs at least 3 points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::domain("correlation inputs must be finite"));
    }
    Ok(())
}

/// Sample Pearson correlation, clamped to `[−1, 1]`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if x.iter().all(|v| *v == x[0]) || sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("first argument is constant".into()));
    }
    if y.iter().all(|v| *v == y[0]) || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("second argument is constant".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their rank range.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

impl CorrelationMethod {
    pub const ALL: [CorrelationMethod; 2] = [CorrelationMethod::Pearson, CorrelationMethod::Spearman];

    pub fn name(self) -> &'static str {
        match self {
            CorrelationMethod::Pearson => "pearson",
            CorrelationMethod::Spearman => "spearman",
        }
    }

    pub fn apply(self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            CorrelationMethod::Pearson => pearson(x, y),
            CorrelationMethod::Spearman => spearman(x, y),
        }
    }
}

impl fmt::Display for CorrelationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One cell of the feature × method × model table. `value` is `None` when
/// the correlation is undefined (constant column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub feature: String,
    pub method: CorrelationMethod,
    pub model: ModelKind,
    pub value: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub models: Vec<ModelKind>,
    /// Feature-major, then method, then model.
    pub entries: Vec<CorrelationEntry>,
}

impl CorrelationTable {
    pub fn get(&self, feature: &str, method: CorrelationMethod, model: ModelKind) -> Option<&CorrelationEntry> {
        self.entries
            .iter()
            .find(|e| e.feature == feature && e.method == method && e.model == model)
    }
}

/// Records grouped by model, each group ordered by sample index.
pub fn records_by_model(records: &[ExperimentRecord]) -> BTreeMap<ModelKind, Vec<ExperimentRecord>> {
    let mut groups: BTreeMap<ModelKind, Vec<ExperimentRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.model).or_default().push(*r);
    }
    for g in groups.values_mut() {
        g.sort_by_key(|r| r.sample_index);
    }
    groups
}

/// Pearson and Spearman of every feature against MRR, per model.
pub fn correlation_table(records: &[ExperimentRecord]) -> Result<CorrelationTable> {
    let groups = records_by_model(records);
    if groups.is_empty() {
        return Err(Error::InsufficientRecords {
            what: "correlation",
            have: 0,
            need: MIN_CORRELATION_RECORDS,
        });
    }
    for g in groups.values() {
        if g.len() < MIN_CORRELATION_RECORDS {
            return Err(Error::InsufficientRecords {
                what: "correlation",
                have: g.len(),
                need: MIN_CORRELATION_RECORDS,
            });
        }
    }
    let mut entries = Vec::new();
    for (fi, feature) in FEATURE_NAMES.iter().enumerate() {
        for method in CorrelationMethod::ALL {
            for (&model, g) in &groups {
                let x: Vec<f64> = g.iter().map(|r| r.features.to_array()[fi]).collect();
                let y: Vec<f64> = g.iter().map(|r| r.mrr).collect();
                let value = match method.apply(&x, &y) {
                    Ok(v) => Some(v),
                    Err(Error::UndefinedCorrelation(why)) => {
                        log::warn!("{method} correlation of {feature} with MRR ({model}) undefined: {why}");
                        None
                    }
                    Err(e) => return Err(e),
                };
                entries.push(CorrelationEntry {
                    feature: (*feature).to_owned(),
                    method,
                    model,
                    value,
                    n: g.len(),
                });
            }
        }
    }
    Ok(CorrelationTable {
        models: groups.keys().copied().collect(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn tie_ranks() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(average_ranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn spearman_of_monotone_pair_is_one() {
        let x = [0.1, 0.5, 0.7, 2.0, 9.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
        assert_eq!(spearman(&x, &y).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn pearson_of_affine_map_is_sign(xs in prop::collection::vec(-100.0f64..100.0, 3..30), a in -5.0f64..5.0, b in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0]) {
            prop_assume!(xs.iter().any(|v| (v - xs[0]).abs() > 1e-3));
            let ys: Vec<f64> = xs.iter().map(|x| a + b * x).collect();
            let r = pearson(&xs, &ys).unwrap();
            prop_assert!((r - b.signum()).abs() < 1e-12);
        }
    }
}

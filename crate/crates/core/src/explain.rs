//! LIME attribution of triple scores to head, relation and tail embedding
//! blocks.
//!
//! For a triple with embedding vector `x = [h, r, t]` (native real
//! parameterization of the model), perturbed copies `x' = x + ε` are scored
//! by the model, weighted by `π(x') = exp(−‖x − x'‖² / σ²)`, and a weighted
//! ridge regression on the offsets `z = x' − x` gives local slopes `β`.
//! Importance is `|β_j|`, summed per block.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{CategoryMap, RelationCategory};
use crate::graph::{KnowledgeGraph, Split, Triple};
use crate::kge::{score_parts, EmbeddingModel};
use crate::seed::{derive_seed, rng_from_seed};
use crate::stats::surrogate::least_squares;

/// Per-dimension standard deviations below this are floored (and flagged).
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimeConfig {
    pub num_perturbations: usize,
    /// σ of the locality kernel; `None` means `0.75·√p` for feature length `p`.
    pub kernel_width: Option<f64>,
    /// Multiplier on each dimension's empirical standard deviation.
    pub perturbation_scale: f64,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            num_perturbations: 5000,
            kernel_width: None,
            perturbation_scale: 0.3,
            ridge: 1e-3,
            seed: 0,
        }
    }
}

impl LimeConfig {
    pub fn kernel_width_for(&self, len: usize) -> f64 {
        self.kernel_width.unwrap_or(0.75 * (len as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.kernel_width {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::domain("kernel width must be positive"));
            }
        }
        if !(self.perturbation_scale >= 0.0 && self.perturbation_scale.is_finite()) {
            return Err(Error::domain("perturbation scale must be nonnegative"));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::domain("ridge weight must be nonnegative"));
        }
        Ok(())
    }
}

/// The model's score of one triple as a function of its embedding vector.
#[derive(Debug, Clone, Copy)]
pub struct BlackBox<'a> {
    model: &'a EmbeddingModel,
    triple: Triple,
}

/// Lengths of the head, relation and tail blocks.
pub type BlockLengths = [usize; 3];

impl<'a> BlackBox<'a> {
    pub fn block_lengths(&self) -> BlockLengths {
        let (ew, rw) = (self.model.entity_width(), self.model.relation_width());
        [ew, rw, ew]
    }

    pub fn len(&self) -> usize {
        self.block_lengths().iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The unperturbed vector `[h, r, t]`.
    pub fn features(&self) -> Vec<f64> {
        let t = &self.triple;
        [self.model.entity(t.head), self.model.relation(t.relation), self.model.entity(t.tail)].concat()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.len() {
            return Err(Error::domain(format!("expected a vector of length {}, got {}", self.len(), x.len())));
        }
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let [ew, rw, _] = self.block_lengths();
        score_parts(self.model.kind(), self.model.dim(), &x[..ew], &x[ew..ew + rw], &x[ew + rw..])
    }
}

pub fn black_box_adapter(model: &EmbeddingModel, triple: Triple) -> Result<BlackBox<'_>> {
    model.check_triple(&triple)?;
    Ok(BlackBox { model, triple })
}

fn column_std(table: &[f64], width: usize) -> Vec<f64> {
    let rows = table.len() / width;
    (0..width)
        .map(|j| {
            let mean = (0..rows).map(|i| table[i * width + j]).sum::<f64>() / rows as f64;
            let var = (0..rows).map(|i| (table[i * width + j] - mean).powi(2)).sum::<f64>() / rows as f64;
            var.sqrt()
        })
        .collect()
}

/// Empirical per-dimension standard deviations for `[h, r, t]`: head and tail
/// dimensions from the entity table, relation dimensions from the relation
/// table.
pub fn feature_stds(model: &EmbeddingModel) -> Vec<f64> {
    let e = column_std(model.entity_table(), model.entity_width());
    let r = column_std(model.relation_table(), model.relation_width());
    [e.as_slice(), r.as_slice(), e.as_slice()].concat()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbations {
    pub samples: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Dimensions whose standard deviation was floored to [`STD_FLOOR`].
    pub floored: Vec<usize>,
}

/// Gaussian locality kernel `exp(−‖x − x'‖² / σ²)`.
pub fn kernel_weight(x: &[f64], xp: &[f64], sigma: f64) -> f64 {
    let d2: f64 = x.iter().zip(xp).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (sigma * sigma)).exp()
}

/// Draws `x + ε` with `εⱼ ~ N(0, (scale·stdⱼ)²)` and kernel weights.
pub fn perturb<R: Rng + ?Sized>(x: &[f64], stds: &[f64], cfg: &LimeConfig, rng: &mut R) -> Result<Perturbations> {
    cfg.validate()?;
    if stds.len() != x.len() {
        return Err(Error::domain("one standard deviation per dimension is required"));
    }
    let mut floored = Vec::new();
    let scales: Vec<f64> = stds
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            if s < STD_FLOOR || !s.is_finite() {
                floored.push(j);
                STD_FLOOR * cfg.perturbation_scale
            } else {
                s * cfg.perturbation_scale
            }
        })
        .collect();
    if !floored.is_empty() {
        log::warn!("{} embedding dimension(s) have zero spread; perturbed with std {STD_FLOOR}", floored.len());
    }
    let sigma = cfg.kernel_width_for(x.len());
    let mut samples = Vec::with_capacity(cfg.num_perturbations);
    let mut weights = Vec::with_capacity(cfg.num_perturbations);
    for _ in 0..cfg.num_perturbations {
        let xp: Vec<f64> = x
            .iter()
            .zip(&scales)
            .map(|(v, s)| v + s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        weights.push(kernel_weight(x, &xp, sigma));
        samples.push(xp);
    }
    Ok(Perturbations {
        samples,
        weights,
        floored,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub r2: f64,
}

/// Weighted ridge regression of `f` on the offsets `x'ᵢ − x`:
/// `min Σ πᵢ (fᵢ − β₀ − β·zᵢ)² + λ‖β‖²`, solved by QR of the augmented system
/// after weighted centering (the intercept is not penalized).
pub fn fit_local_model(samples: &[Vec<f64>], x: &[f64], weights: &[f64], f: &[f64], ridge: f64) -> Result<LocalFit> {
    let n = samples.len();
    let p = x.len();
    if weights.len() != n || f.len() != n {
        return Err(Error::domain("samples, weights and responses must have equal length"));
    }
    if n < p + 1 {
        return Err(Error::domain(format!("need at least {} perturbations for {p} features, got {n}", p + 1)));
    }
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::domain("kernel weights must be finite and nonnegative"));
    }
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(Error::domain("all kernel weights are zero; widen the kernel"));
    }
    let zbar: Vec<f64> = (0..p)
        .map(|j| samples.iter().zip(weights).map(|(s, w)| w * (s[j] - x[j])).sum::<f64>() / wsum)
        .collect();
    let ybar = f.iter().zip(weights).map(|(y, w)| w * y).sum::<f64>() / wsum;

    let rows = n + if ridge > 0.0 { p } else { 0 };
    let mut a = DMatrix::zeros(rows, p);
    let mut b = DVector::zeros(rows);
    for (i, s) in samples.iter().enumerate() {
        let sw = weights[i].sqrt();
        for j in 0..p {
            a[(i, j)] = sw * (s[j] - x[j] - zbar[j]);
        }
        b[i] = sw * (f[i] - ybar);
    }
    if ridge > 0.0 {
        let sl = ridge.sqrt();
        for j in 0..p {
            a[(n + j, j)] = sl;
        }
    }
    let beta = least_squares(a, &b).map_err(|e| match e {
        Error::RankDeficient(m) if ridge == 0.0 => {
            Error::RankDeficient(format!("{m}; use a positive ridge weight"))
        }
        other => other,
    })?;
    let intercept = ybar - beta.iter().zip(&zbar).map(|(b, z)| b * z).sum::<f64>();

    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (i, s) in samples.iter().enumerate() {
        let pred = intercept + (0..p).map(|j| beta[j] * (s[j] - x[j])).sum::<f64>();
        ss_res += weights[i] * (f[i] - pred).powi(2);
        ss_tot += weights[i] * (f[i] - ybar).powi(2);
    }
    let r2 = if ss_tot <= f64::MIN_POSITIVE { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LocalFit {
        intercept,
        beta: beta.iter().copied().collect(),
        r2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockImportance {
    pub head: f64,
    pub relation: f64,
    pub tail: f64,
}

impl BlockImportance {
    pub fn total(&self) -> f64 {
        self.head + self.relation + self.tail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeExplanation {
    pub triple: Option<Triple>,
    /// Seed of the perturbation stream when explaining a triple.
    pub seed: Option<u64>,
    pub config: LimeConfig,
    pub kernel_width: f64,
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub importance: Vec<f64>,
    pub block_importance: BlockImportance,
    pub block_lengths: BlockLengths,
    pub fit_r2: f64,
    pub target_score: f64,
    pub floored_dims: Vec<usize>,
}

/// LIME on an arbitrary function of a blocked feature vector.
pub fn explain_function<F, R>(
    f: F,
    x: &[f64],
    stds: &[f64],
    blocks: BlockLengths,
    cfg: &LimeConfig,
    rng: &mut R,
) -> Result<LimeExplanation>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    if blocks.iter().sum::<usize>() != x.len() {
        return Err(Error::domain("block lengths must add up to the feature length"));
    }
    if cfg.num_perturbations < x.len() + 1 {
        return Err(Error::domain(format!(
            "{} perturbations cannot fit {} slopes; need at least {}",
            cfg.num_perturbations,
            x.len(),
            x.len() + 1
        )));
    }
    let pert = perturb(x, stds, cfg, rng)?;
    let fv: Vec<f64> = pert.samples.iter().map(|s| f(s)).collect();
    if fv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("black box returned a non-finite score".into()));
    }
    let fit = fit_local_model(&pert.samples, x, &pert.weights, &fv, cfg.ridge)?;
    let importance: Vec<f64> = fit.beta.iter().map(|b| b.abs()).collect();
    let [hl, rl, _] = blocks;
    let block_importance = BlockImportance {
        head: importance[..hl].iter().sum(),
        relation: importance[hl..hl + rl].iter().sum(),
        tail: importance[hl + rl..].iter().sum(),
    };
    Ok(LimeExplanation {
        triple: None,
        seed: None,
        config: cfg.clone(),
        kernel_width: cfg.kernel_width_for(x.len()),
        intercept: fit.intercept,
        beta: fit.beta,
        importance,
        block_importance,
        block_lengths: blocks,
        fit_r2: fit.r2,
        target_score: f(x),
        floored_dims: pert.floored,
    })
}

/// Seed of the explanation of `triple` under `cfg`.
pub fn triple_seed(cfg: &LimeConfig, triple: &Triple) -> u64 {
    derive_seed(cfg.seed, &[u64::from(triple.head), u64::from(triple.relation), u64::from(triple.tail)])
}

pub fn explain_triple(model: &EmbeddingModel, triple: Triple, cfg: &LimeConfig) -> Result<LimeExplanation> {
    explain_triple_with_stds(model, triple, cfg, &feature_stds(model))
}

fn explain_triple_with_stds(model: &EmbeddingModel, triple: Triple, cfg: &LimeConfig, stds: &[f64]) -> Result<LimeExplanation> {
    let bb = black_box_adapter(model, triple)?;
    let seed = triple_seed(cfg, &triple);
    let mut rng = rng_from_seed(seed);
    let mut e = explain_function(|x| bb.eval_unchecked(x), &bb.features(), stds, bb.block_lengths(), cfg, &mut rng)?;
    e.triple = Some(triple);
    e.seed = Some(seed);
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreGroup {
    High,
    Low,
}

impl ScoreGroup {
    pub fn name(self) -> &'static str {
        match self {
            ScoreGroup::High => "high",
            ScoreGroup::Low => "low",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Representatives {
    /// Highest scores first.
    pub high: Vec<Triple>,
    /// Lowest scores first.
    pub low: Vec<Triple>,
}

/// Size of a `q` quantile group of `n` items: `max(1, ⌊q·n⌋)`.
pub fn quantile_count(q: f64, n: usize) -> usize {
    ((q * n as f64 + 1e-9).floor() as usize).clamp(1, n)
}

/// Top and bottom `q` quantiles of test triples by score, per category.
/// Ordering is score descending, then triple ascending; `high` is a prefix
/// and `low` the reversed suffix of that order, so they are disjoint for
/// `q ≤ 0.5` and at least two triples.
pub fn select_representatives(
    model: &EmbeddingModel,
    graph: &KnowledgeGraph,
    categories: &CategoryMap,
    q: f64,
) -> Result<BTreeMap<RelationCategory, Representatives>> {
    if !(q > 0.0 && q <= 0.5) {
        return Err(Error::domain(format!("quantile q must lie in (0, 0.5], got {q}")));
    }
    let mut groups: BTreeMap<RelationCategory, Vec<(f64, Triple)>> = BTreeMap::new();
    for t in graph.split(Split::Test) {
        match categories.get(t.relation) {
            Some(c) => groups.entry(c).or_default().push((model.score(t)?, *t)),
            None => log::warn!("test triple {t} has an uncategorized relation; skipped"),
        }
    }
    let mut out = BTreeMap::new();
    for c in RelationCategory::ALL {
        let Some(mut scored) = groups.remove(&c) else {
            log::warn!("no test triples in category {}; skipped", c.label());
            continue;
        };
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let k = quantile_count(q, scored.len());
        out.insert(
            c,
            Representatives {
                high: scored[..k].iter().map(|s| s.1).collect(),
                low: scored[scored.len() - k..].iter().rev().map(|s| s.1).collect(),
            },
        );
    }
    Ok(out)
}

/// One row of the category × group importance profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub category: RelationCategory,
    pub group: ScoreGroup,
    pub i_head: f64,
    pub i_relation: f64,
    pub i_tail: f64,
    pub group_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceProfile {
    pub rows: Vec<ProfileRow>,
    pub explanations: Vec<LimeExplanation>,
}

/// Mean block importances of the high and low representatives of every
/// category. `max_per_group` caps the group size (keeping the most extreme
/// scores).
pub fn category_importance_profile(
    model: &EmbeddingModel,
    graph: &KnowledgeGraph,
    categories: &CategoryMap,
    q: f64,
    max_per_group: Option<usize>,
    cfg: &LimeConfig,
) -> Result<ImportanceProfile> {
    let reps = select_representatives(model, graph, categories, q)?;
    let mut jobs: Vec<(RelationCategory, ScoreGroup, Triple)> = Vec::new();
    for (c, r) in &reps {
        for (g, list) in [(ScoreGroup::High, &r.high), (ScoreGroup::Low, &r.low)] {
            let cap = max_per_group.unwrap_or(usize::MAX).max(1);
            jobs.extend(list.iter().take(cap).map(|t| (*c, g, *t)));
        }
    }
    let stds = feature_stds(model);
    let explanations: Vec<LimeExplanation> = jobs
        .par_iter()
        .map(|(_, _, t)| explain_triple_with_stds(model, *t, cfg, &stds))
        .collect::<Result<_>>()?;
    let mut acc: BTreeMap<(RelationCategory, ScoreGroup), (BlockImportance, usize)> = BTreeMap::new();
    for ((c, g, _), e) in jobs.iter().zip(&explanations) {
        let slot = acc.entry((*c, *g)).or_insert((
            BlockImportance {
                head: 0.0,
                relation: 0.0,
                tail: 0.0,
            },
            0,
        ));
        slot.0.head += e.block_importance.head;
        slot.0.relation += e.block_importance.relation;
        slot.0.tail += e.block_importance.tail;
        slot.1 += 1;
    }
    let rows = acc
        .into_iter()
        .map(|((category, group), (b, n))| ProfileRow {
            category,
            group,
            i_head: b.head / n as f64,
            i_relation: b.relation / n as f64,
            i_tail: b.tail / n as f64,
            group_size: n,
        })
        .collect();
    Ok(ImportanceProfile { rows, explanations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kge::ModelKind;

    fn transe(ent: Vec<f64>, rel: Vec<f64>, dim: usize) -> EmbeddingModel {
        EmbeddingModel::from_tables(ModelKind::TransE, dim, ent, rel).unwrap()
    }

    #[test]
    fn adapter_identity_and_translation_zero() {
        let m = transe(vec![1.0, 0.0, 1.5, 0.5, 0.3, -0.2], vec![0.5, 0.5], 2);
        let t = Triple::new(0, 0, 1);
        let bb = black_box_adapter(&m, t).unwrap();
        assert_eq!(bb.eval(&bb.features()).unwrap(), m.score(&t).unwrap());
        assert_eq!(bb.eval(&[0.2, 0.1, 0.3, 0.4, 0.5, 0.5]).unwrap(), 0.0);
        assert!(bb.eval(&[0.0; 5]).is_err());
        assert!(black_box_adapter(&m, Triple::new(0, 0, 3)).is_err());
    }

    #[test]
    fn zero_scale_gives_unit_weights() {
        let cfg = LimeConfig { perturbation_scale: 0.0, num_perturbations: 20, ..Default::default() };
        let x = [0.5, -1.0, 2.0];
        let p = perturb(&x, &[1.0, 1.0, 1.0], &cfg, &mut rng_from_seed(1)).unwrap();
        assert!(p.samples.iter().all(|s| s == &x));
        assert!(p.weights.iter().all(|w| *w == 1.0));
    }

    #[test]
    fn kernel_at_one_width_is_inverse_e() {
        let w = kernel_weight(&[0.0, 0.0], &[0.6, 0.8], 1.0);
        assert!((w - (-1.0f64).exp()).abs() < 1e-15);
        assert!(kernel_weight(&[0.0], &[0.5], 1.0) > kernel_weight(&[0.0], &[0.6], 1.0));
    }

    #[test]
    fn zero_std_is_floored_and_flagged() {
        let p = perturb(&[1.0, 1.0], &[0.0, 1.0], &LimeConfig::default(), &mut rng_from_seed(2)).unwrap();
        assert_eq!(p.floored, vec![0]);
        assert!(p.samples.iter().all(|s| (s[0] - 1.0).abs() < 1e-4));
    }

    #[test]
    fn constant_function_has_zero_slopes() {
        let cfg = LimeConfig { num_perturbations: 200, ..Default::default() };
        let e = explain_function(|_| 4.0, &[0.0; 6], &[1.0; 6], [2, 2, 2], &cfg, &mut rng_from_seed(3)).unwrap();
        assert!(e.beta.iter().all(|b| b.abs() < 1e-12));
        assert!((e.intercept - 4.0).abs() < 1e-12);
        assert_eq!(e.fit_r2, 1.0);
    }

    #[test]
    fn duplicated_samples_with_halved_weights_fit_identically() {
        let mut rng = rng_from_seed(4);
        let x = vec![0.1, 0.2, 0.3];
        let p = perturb(&x, &[1.0; 3], &LimeConfig { num_perturbations: 50, ..Default::default() }, &mut rng).unwrap();
        let f: Vec<f64> = p.samples.iter().map(|s| s[0].sin() + s[1] * s[2]).collect();
        let a = fit_local_model(&p.samples, &x, &p.weights, &f, 1e-3).unwrap();
        let samples2: Vec<Vec<f64>> = p.samples.iter().flat_map(|s| [s.clone(), s.clone()]).collect();
        let w2: Vec<f64> = p.weights.iter().flat_map(|w| [w / 2.0, w / 2.0]).collect();
        let f2: Vec<f64> = f.iter().flat_map(|v| [*v, *v]).collect();
        let b = fit_local_model(&samples2, &x, &w2, &f2, 1e-3).unwrap();
        assert!((a.intercept - b.intercept).abs() < 1e-10);
        for (u, v) in a.beta.iter().zip(&b.beta) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_system_without_ridge_is_reported() {
        // every sample identical to x: the offset design is all zeros
        let x = vec![1.0, 2.0];
        let samples = vec![x.clone(); 5];
        let err = fit_local_model(&samples, &x, &[1.0; 5], &[0.0, 1.0, 2.0, 3.0, 4.0], 0.0).unwrap_err();
        assert!(err.to_string().contains("positive ridge"), "{err}");
        assert!(fit_local_model(&samples, &x, &[0.0; 5], &[0.0; 5], 1e-3).is_err());
        assert!(fit_local_model(&samples[..2], &x, &[1.0; 2], &[0.0; 2], 1e-3).is_err());
    }

    #[test]
    fn quantile_groups() {
        assert_eq!(quantile_count(0.1, 10), 1);
        assert_eq!(quantile_count(0.1, 5), 1);
        assert_eq!(quantile_count(0.3, 10), 3);
        assert_eq!(quantile_count(0.5, 3), 1);
    }

    #[test]
    fn transe_gradient_is_recovered_away_from_kinks() {
        // h + r − t = (1.0, −2.0): slopes are −sign per block, +sign on t
        let m = transe(vec![0.5, -0.5, -0.5, 1.5], vec![0.0, 0.0], 2);
        let cfg = LimeConfig { perturbation_scale: 0.05, num_perturbations: 2000, ridge: 1e-8, ..Default::default() };
        let stds = vec![1.0; 6];
        let bb = black_box_adapter(&m, Triple::new(0, 0, 1)).unwrap();
        let e = explain_function(|x| bb.eval_unchecked(x), &bb.features(), &stds, bb.block_lengths(), &cfg, &mut rng_from_seed(5)).unwrap();
        let expected = [-1.0, 1.0, -1.0, 1.0, 1.0, -1.0];
        for (b, g) in e.beta.iter().zip(expected) {
            assert!((b - g).abs() < 0.05, "{:?}", e.beta);
        }
    }
}

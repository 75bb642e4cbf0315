//! Mini-batch training with corrupted-triple negatives.
//!
//! Per positive triple the objective is
//!
//! * TransE: `mean_j max(0, γ − s⁺ + s⁻ⱼ)` (margin ranking), plain SGD, entity
//!   rows renormalized to L2 norm ≤ 1 after every batch;
//! * RotatE: `−log σ(γ + s⁺) − Σⱼ pⱼ log σ(−γ − s⁻ⱼ)` with self-adversarial
//!   weights `p = softmax(α·s⁻)` held constant during differentiation, plain
//!   SGD;
//! * ComplEx: `softplus(−s⁺) + mean_j softplus(s⁻ⱼ)` plus an L2 penalty on
//!   every embedding row the scored triples touch, Adagrad.
//!
//! A batch objective is the sum over its positives; the loss trace reports
//! the per-positive mean for each epoch.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{accumulate_score_grad, wrap_phase, EmbeddingModel, ModelKind};
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triple};
use crate::seed::{derive_seed, label_key, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// γ; defaults to 5.0 for TransE and 6.0 for RotatE. Unused by ComplEx.
    pub margin: Option<f64>,
    /// α of the self-adversarial weighting (RotatE only).
    pub adversarial_temperature: f64,
    pub negatives: usize,
    pub l2_weight: f64,
    pub seed: u64,
    /// Rejection attempts per negative before it is dropped.
    pub max_corruption_tries: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 512,
            learning_rate: 0.01,
            margin: None,
            adversarial_temperature: 1.0,
            negatives: 8,
            l2_weight: 1e-5,
            seed: 0,
            max_corruption_tries: 10,
        }
    }
}

impl TrainConfig {
    pub fn margin_for(&self, kind: ModelKind) -> f64 {
        self.margin.unwrap_or(match kind {
            ModelKind::TransE => 5.0,
            ModelKind::RotatE => 6.0,
            ModelKind::ComplEx => 0.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::domain("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain("learning rate must be positive and finite"));
        }
        if self.l2_weight < 0.0 {
            return Err(Error::domain("l2 weight must be nonnegative"));
        }
        Ok(())
    }
}

/// Positives with their corrupted negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub positives: Vec<Triple>,
    pub negatives: Vec<Vec<Triple>>,
}

/// Corrupts head or tail (fair coin) with a uniform entity, rejecting
/// corruptions that are known train triples.
pub fn build_batch<R: Rng + ?Sized>(
    positives: &[Triple],
    known: &HashSet<Triple>,
    num_entities: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Batch {
    let negatives = positives
        .iter()
        .map(|p| {
            let mut negs = Vec::with_capacity(cfg.negatives);
            for _ in 0..cfg.negatives {
                for _ in 0..cfg.max_corruption_tries.max(1) {
                    let e = rng.random_range(0..num_entities as u32);
                    let cand = if rng.random_bool(0.5) {
                        Triple::new(e, p.relation, p.tail)
                    } else {
                        Triple::new(p.head, p.relation, e)
                    };
                    if !known.contains(&cand) {
                        negs.push(cand);
                        break;
                    }
                }
            }
            negs
        })
        .collect();
    Batch {
        positives: positives.to_vec(),
        negatives,
    }
}

/// Dense gradient of a batch objective, laid out like the model tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub entity: Vec<f64>,
    pub relation: Vec<f64>,
}

/// Gradient accumulator that remembers which rows were touched.
struct GradBuffer {
    ew: usize,
    rw: usize,
    ent: Vec<f64>,
    rel: Vec<f64>,
    ent_rows: Vec<u32>,
    rel_rows: Vec<u32>,
    ent_mark: Vec<bool>,
    rel_mark: Vec<bool>,
}

impl GradBuffer {
    fn new(model: &EmbeddingModel) -> Self {
        Self {
            ew: model.entity_width(),
            rw: model.relation_width(),
            ent: vec![0.0; model.entity_table().len()],
            rel: vec![0.0; model.relation_table().len()],
            ent_rows: Vec::new(),
            rel_rows: Vec::new(),
            ent_mark: vec![false; model.num_entities()],
            rel_mark: vec![false; model.num_relations()],
        }
    }

    fn add_entity(&mut self, e: u32, g: &[f64]) {
        if !self.ent_mark[e as usize] {
            self.ent_mark[e as usize] = true;
            self.ent_rows.push(e);
        }
        let row = &mut self.ent[e as usize * self.ew..(e as usize + 1) * self.ew];
        row.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }

    fn add_relation(&mut self, r: u32, g: &[f64]) {
        if !self.rel_mark[r as usize] {
            self.rel_mark[r as usize] = true;
            self.rel_rows.push(r);
        }
        let row = &mut self.rel[r as usize * self.rw..(r as usize + 1) * self.rw];
        row.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }

    fn clear(&mut self) {
        for &e in &self.ent_rows {
            self.ent[e as usize * self.ew..(e as usize + 1) * self.ew].fill(0.0);
            self.ent_mark[e as usize] = false;
        }
        for &r in &self.rel_rows {
            self.rel[r as usize * self.rw..(r as usize + 1) * self.rw].fill(0.0);
            self.rel_mark[r as usize] = false;
        }
        self.ent_rows.clear();
        self.rel_rows.clear();
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Self-adversarial weights `softmax(α·s⁻)` per positive, from the current
/// model. Empty for kinds that do not use them.
pub fn adversarial_weights(model: &EmbeddingModel, batch: &Batch, cfg: &TrainConfig) -> Vec<Vec<f64>> {
    if model.kind() != ModelKind::RotatE {
        return Vec::new();
    }
    batch
        .negatives
        .iter()
        .map(|negs| {
            let logits: Vec<f64> = negs
                .iter()
                .map(|n| cfg.adversarial_temperature * model.score_unchecked(n))
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / z).collect()
        })
        .collect()
}

/// Scratch rows for one scored triple.
struct TripleGrad {
    h: Vec<f64>,
    r: Vec<f64>,
    t: Vec<f64>,
}

impl TripleGrad {
    fn new(model: &EmbeddingModel) -> Self {
        Self {
            h: vec![0.0; model.entity_width()],
            r: vec![0.0; model.relation_width()],
            t: vec![0.0; model.entity_width()],
        }
    }

    /// Adds `coef · ∂score(t)/∂θ` (plus `l2 · ∂‖rows‖²/∂θ`) into `buf`.
    fn push(&mut self, model: &EmbeddingModel, t: &Triple, coef: f64, l2: f64, buf: &mut GradBuffer) {
        self.h.fill(0.0);
        self.r.fill(0.0);
        self.t.fill(0.0);
        let (h, r, tl) = (model.entity(t.head), model.relation(t.relation), model.entity(t.tail));
        accumulate_score_grad(model.kind(), model.dim(), h, r, tl, coef, &mut self.h, &mut self.r, &mut self.t);
        if l2 != 0.0 {
            self.h.iter_mut().zip(h).for_each(|(g, x)| *g += 2.0 * l2 * x);
            self.r.iter_mut().zip(r).for_each(|(g, x)| *g += 2.0 * l2 * x);
            self.t.iter_mut().zip(tl).for_each(|(g, x)| *g += 2.0 * l2 * x);
        }
        buf.add_entity(t.head, &self.h);
        buf.add_relation(t.relation, &self.r);
        buf.add_entity(t.tail, &self.t);
    }
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn l2_term(model: &EmbeddingModel, t: &Triple) -> f64 {
    sq_norm(model.entity(t.head)) + sq_norm(model.relation(t.relation)) + sq_norm(model.entity(t.tail))
}

/// Objective of one batch; optionally accumulates its gradient.
fn objective(
    model: &EmbeddingModel,
    batch: &Batch,
    cfg: &TrainConfig,
    weights: &[Vec<f64>],
    mut buf: Option<&mut GradBuffer>,
) -> f64 {
    let kind = model.kind();
    let gamma = cfg.margin_for(kind);
    let mut scratch = TripleGrad::new(model);
    let mut total = 0.0;
    for (i, (pos, negs)) in batch.positives.iter().zip(&batch.negatives).enumerate() {
        let sp = model.score_unchecked(pos);
        match kind {
            ModelKind::TransE => {
                let k = 1.0 / negs.len().max(1) as f64;
                for n in negs {
                    let sn = model.score_unchecked(n);
                    let m = gamma - sp + sn;
                    if m > 0.0 {
                        total += k * m;
                        if let Some(b) = buf.as_deref_mut() {
                            scratch.push(model, pos, -k, 0.0, b);
                            scratch.push(model, n, k, 0.0, b);
                        }
                    }
                }
            }
            ModelKind::RotatE => {
                total += softplus(-(gamma + sp));
                if let Some(b) = buf.as_deref_mut() {
                    scratch.push(model, pos, -sigmoid(-(gamma + sp)), 0.0, b);
                }
                for (n, &p) in negs.iter().zip(&weights[i]) {
                    let sn = model.score_unchecked(n);
                    total += p * softplus(gamma + sn);
                    if let Some(b) = buf.as_deref_mut() {
                        scratch.push(model, n, p * sigmoid(gamma + sn), 0.0, b);
                    }
                }
            }
            ModelKind::ComplEx => {
                let l2 = cfg.l2_weight;
                total += softplus(-sp) + l2 * l2_term(model, pos);
                if let Some(b) = buf.as_deref_mut() {
                    scratch.push(model, pos, -sigmoid(-sp), l2, b);
                }
                if !negs.is_empty() {
                    let k = 1.0 / negs.len() as f64;
                    for n in negs {
                        let sn = model.score_unchecked(n);
                        total += k * (softplus(sn) + l2 * l2_term(model, n));
                        if let Some(b) = buf.as_deref_mut() {
                            scratch.push(model, n, k * sigmoid(sn), k * l2, b);
                        }
                    }
                }
            }
        }
    }
    total
}

/// Batch objective. `weights` freezes the self-adversarial weights (RotatE);
/// `None` computes them from the current model.
pub fn batch_loss(model: &EmbeddingModel, batch: &Batch, cfg: &TrainConfig, weights: Option<&[Vec<f64>]>) -> f64 {
    let owned;
    let w = match weights {
        Some(w) => w,
        None => {
            owned = adversarial_weights(model, batch, cfg);
            &owned
        }
    };
    objective(model, batch, cfg, w, None)
}

/// Batch objective and its analytic gradient (adversarial weights constant).
pub fn batch_loss_and_grad(
    model: &EmbeddingModel,
    batch: &Batch,
    cfg: &TrainConfig,
    weights: Option<&[Vec<f64>]>,
) -> (f64, Gradient) {
    let owned;
    let w = match weights {
        Some(w) => w,
        None => {
            owned = adversarial_weights(model, batch, cfg);
            &owned
        }
    };
    let mut buf = GradBuffer::new(model);
    let loss = objective(model, batch, cfg, w, Some(&mut buf));
    (
        loss,
        Gradient {
            entity: buf.ent,
            relation: buf.rel,
        },
    )
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EmbeddingModel,
    /// Mean per-positive objective of every epoch.
    pub loss_trace: Vec<f64>,
}

struct Adagrad {
    ent: Vec<f64>,
    rel: Vec<f64>,
}

const ADAGRAD_EPS: f64 = 1e-10;

fn apply_update(model: &mut EmbeddingModel, buf: &GradBuffer, lr: f64, adagrad: Option<&mut Adagrad>) {
    let (ew, rw) = (buf.ew, buf.rw);
    match adagrad {
        Some(acc) => {
            for &e in &buf.ent_rows {
                let range = e as usize * ew..(e as usize + 1) * ew;
                let g = &buf.ent[range.clone()];
                let a = &mut acc.ent[range];
                let row = model.entity_mut(e);
                for j in 0..ew {
                    a[j] += g[j] * g[j];
                    row[j] -= lr * g[j] / (a[j].sqrt() + ADAGRAD_EPS);
                }
            }
            for &r in &buf.rel_rows {
                let range = r as usize * rw..(r as usize + 1) * rw;
                let g = &buf.rel[range.clone()];
                let a = &mut acc.rel[range];
                let row = model.relation_mut(r);
                for j in 0..rw {
                    a[j] += g[j] * g[j];
                    row[j] -= lr * g[j] / (a[j].sqrt() + ADAGRAD_EPS);
                }
            }
        }
        None => {
            for &e in &buf.ent_rows {
                let g = &buf.ent[e as usize * ew..(e as usize + 1) * ew];
                model.entity_mut(e).iter_mut().zip(g).for_each(|(x, g)| *x -= lr * g);
            }
            let phases = model.kind() == ModelKind::RotatE;
            for &r in &buf.rel_rows {
                let g = &buf.rel[r as usize * rw..(r as usize + 1) * rw];
                for (x, g) in model.relation_mut(r).iter_mut().zip(g) {
                    *x -= lr * g;
                    if phases {
                        *x = wrap_phase(*x);
                    }
                }
            }
        }
    }
    if model.kind() == ModelKind::TransE {
        for &e in &buf.ent_rows {
            let row = model.entity_mut(e);
            let norm = sq_norm(row).sqrt();
            if norm > 1.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
    }
}

/// Trains `model` on the train split of `graph`. Single-threaded and
/// bitwise reproducible for a fixed `cfg.seed`.
pub fn train(mut model: EmbeddingModel, graph: &KnowledgeGraph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let positives = graph.train();
    if positives.is_empty() {
        return Err(Error::domain("cannot train on an empty train split"));
    }
    if model.num_entities() != graph.num_entities() || model.num_relations() != graph.num_relations() {
        return Err(Error::domain(format!(
            "model shape {}×{} does not match graph {}×{}",
            model.num_entities(),
            model.num_relations(),
            graph.num_entities(),
            graph.num_relations()
        )));
    }
    let known: HashSet<Triple> = positives.iter().copied().collect();
    let mut rng = rng_from_seed(derive_seed(cfg.seed, &[label_key("train")]));
    let mut order: Vec<usize> = (0..positives.len()).collect();
    let mut buf = GradBuffer::new(&model);
    let mut adagrad = (model.kind() == ModelKind::ComplEx).then(|| Adagrad {
        ent: vec![0.0; model.entity_table().len()],
        rel: vec![0.0; model.relation_table().len()],
    });
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut chunk = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            chunk.clear();
            chunk.extend(idx.iter().map(|&i| positives[i]));
            let batch = build_batch(&chunk, &known, model.num_entities(), cfg, &mut rng);
            let weights = adversarial_weights(&model, &batch, cfg);
            buf.clear();
            let loss = objective(&model, &batch, cfg, &weights, Some(&mut buf));
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss in epoch {epoch}; learning rate {} is likely too high",
                    cfg.learning_rate
                )));
            }
            epoch_loss += loss;
            apply_update(&mut model, &buf, cfg.learning_rate, adagrad.as_mut());
        }
        trace.push(epoch_loss / positives.len() as f64);
    }
    if !model.all_finite() {
        return Err(Error::Numeric("training produced non-finite embeddings".into()));
    }
    Ok(TrainOutcome {
        model,
        loss_trace: trace,
    })
}

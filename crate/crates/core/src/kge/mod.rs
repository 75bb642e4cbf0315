//! Knowledge graph embedding models trained from scratch.
//!
//! All three scoring functions share one orientation: higher is more
//! plausible.
//!
//! | kind    | entity row | relation row | score                         |
//! |---------|------------|--------------|-------------------------------|
//! | TransE  | d reals    | d reals      | −‖h + r − t‖₁                 |
//! | ComplEx | d complex  | d complex    | Re(Σ hᵢ·rᵢ·conj(tᵢ))          |
//! | RotatE  | d complex  | d phases     | −Σ \|hᵢ·e^{iθᵢ} − tᵢ\|        |
//!
//! Complex rows are stored as `[re₀..re_{d−1}, im₀..im_{d−1}]`.

mod checkpoint;
mod eval;
mod grid;
mod train;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, RelationId, Triple};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, vocab_hash, write_checkpoint, CheckpointSidecar,
    CHECKPOINT_MAGIC,
};
pub use eval::{
    evaluate, evaluate_by_category, rank_queries, EvalReport, EvalSide, FilterIndex, Metrics, QueryRank,
    QuerySide,
};
pub use grid::{cell_seed, hyperparam_grid, GridAxis, GridRow};
pub use train::{
    adversarial_weights, batch_loss, batch_loss_and_grad, build_batch, train, Batch, Gradient,
    TrainConfig, TrainOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    TransE,
    ComplEx,
    RotatE,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::TransE, ModelKind::ComplEx, ModelKind::RotatE];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TransE => "transe",
            ModelKind::ComplEx => "complex",
            ModelKind::RotatE => "rotate",
        }
    }

    fn code(self) -> u32 {
        match self {
            ModelKind::TransE => 0,
            ModelKind::ComplEx => 1,
            ModelKind::RotatE => 2,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        ModelKind::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn entity_width(self, dim: usize) -> usize {
        match self {
            ModelKind::TransE => dim,
            ModelKind::ComplEx | ModelKind::RotatE => 2 * dim,
        }
    }

    pub fn relation_width(self, dim: usize) -> usize {
        match self {
            ModelKind::TransE | ModelKind::RotatE => dim,
            ModelKind::ComplEx => 2 * dim,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::domain(format!("unknown model kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    kind: ModelKind,
    dim: usize,
    num_entities: usize,
    num_relations: usize,
    entity: Vec<f64>,
    relation: Vec<f64>,
}

impl EmbeddingModel {
    /// Uniform initialization in `[−6/√d, 6/√d]`; RotatE phases uniform in
    /// `[−π, π)`.
    pub fn init<R: Rng + ?Sized>(
        kind: ModelKind,
        dim: usize,
        num_entities: usize,
        num_relations: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("embedding dimension must be positive"));
        }
        if num_entities == 0 || num_relations == 0 {
            return Err(Error::domain("model needs at least one entity and one relation"));
        }
        let bound = 6.0 / (dim as f64).sqrt();
        let ew = kind.entity_width(dim);
        let rw = kind.relation_width(dim);
        let entity = (0..num_entities * ew)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let relation = (0..num_relations * rw)
            .map(|_| match kind {
                ModelKind::RotatE => rng.random_range(-PI..PI),
                _ => rng.random_range(-bound..=bound),
            })
            .collect();
        Ok(Self {
            kind,
            dim,
            num_entities,
            num_relations,
            entity,
            relation,
        })
    }

    /// Builds a model from explicit tables (row-major).
    pub fn from_tables(
        kind: ModelKind,
        dim: usize,
        entity: Vec<f64>,
        relation: Vec<f64>,
    ) -> Result<Self> {
        let ew = kind.entity_width(dim);
        let rw = kind.relation_width(dim);
        if dim == 0 || entity.is_empty() || relation.is_empty() || !entity.len().is_multiple_of(ew) || !relation.len().is_multiple_of(rw) {
            return Err(Error::domain(format!(
                "table sizes {}/{} do not fit {kind} with d = {dim}",
                entity.len(),
                relation.len()
            )));
        }
        if entity.iter().chain(&relation).any(|v| !v.is_finite()) {
            return Err(Error::domain("embedding tables must be finite"));
        }
        Ok(Self {
            kind,
            dim,
            num_entities: entity.len() / ew,
            num_relations: relation.len() / rw,
            entity,
            relation,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn entity_width(&self) -> usize {
        self.kind.entity_width(self.dim)
    }

    pub fn relation_width(&self) -> usize {
        self.kind.relation_width(self.dim)
    }

    pub fn entity_table(&self) -> &[f64] {
        &self.entity
    }

    pub fn relation_table(&self) -> &[f64] {
        &self.relation
    }

    pub fn entity(&self, e: EntityId) -> &[f64] {
        let w = self.entity_width();
        &self.entity[e as usize * w..(e as usize + 1) * w]
    }

    pub fn relation(&self, r: RelationId) -> &[f64] {
        let w = self.relation_width();
        &self.relation[r as usize * w..(r as usize + 1) * w]
    }

    pub(crate) fn entity_mut(&mut self, e: EntityId) -> &mut [f64] {
        let w = self.entity_width();
        &mut self.entity[e as usize * w..(e as usize + 1) * w]
    }

    pub(crate) fn relation_mut(&mut self, r: RelationId) -> &mut [f64] {
        let w = self.relation_width();
        &mut self.relation[r as usize * w..(r as usize + 1) * w]
    }

    pub fn check_triple(&self, t: &Triple) -> Result<()> {
        if t.head as usize >= self.num_entities || t.tail as usize >= self.num_entities {
            return Err(Error::domain(format!("triple {t}: entity id out of range (|V| = {})", self.num_entities)));
        }
        if t.relation as usize >= self.num_relations {
            return Err(Error::domain(format!("triple {t}: relation id out of range (|R| = {})", self.num_relations)));
        }
        Ok(())
    }

    pub fn score(&self, t: &Triple) -> Result<f64> {
        self.check_triple(t)?;
        Ok(self.score_unchecked(t))
    }

    #[inline]
    pub(crate) fn score_unchecked(&self, t: &Triple) -> f64 {
        score_parts(
            self.kind,
            self.dim,
            self.entity(t.head),
            self.relation(t.relation),
            self.entity(t.tail),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.entity.iter().chain(&self.relation).all(|v| v.is_finite())
    }
}

/// Scores raw parameter blocks; `h`/`t` are entity rows, `r` a relation row.
#[inline]
pub fn score_parts(kind: ModelKind, dim: usize, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    match kind {
        ModelKind::TransE => -h
            .iter()
            .zip(r)
            .zip(t)
            .map(|((h, r), t)| (h + r - t).abs())
            .sum::<f64>(),
        ModelKind::ComplEx => {
            let (hr, hi) = h.split_at(dim);
            let (rr, ri) = r.split_at(dim);
            let (tr, ti) = t.split_at(dim);
            let mut s = 0.0;
            for i in 0..dim {
                s += hr[i] * rr[i] * tr[i] + hi[i] * rr[i] * ti[i] + hr[i] * ri[i] * ti[i]
                    - hi[i] * ri[i] * tr[i];
            }
            s
        }
        ModelKind::RotatE => {
            let (hr, hi) = h.split_at(dim);
            let (tr, ti) = t.split_at(dim);
            let mut s = 0.0;
            for i in 0..dim {
                let (sin, cos) = r[i].sin_cos();
                let u = hr[i] * cos - hi[i] * sin - tr[i];
                let w = hr[i] * sin + hi[i] * cos - ti[i];
                s -= u.hypot(w);
            }
            s
        }
    }
}

/// Adds `scale · ∂score/∂(h, r, t)` into the given gradient rows.
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_score_grad(
    kind: ModelKind,
    dim: usize,
    h: &[f64],
    r: &[f64],
    t: &[f64],
    scale: f64,
    gh: &mut [f64],
    gr: &mut [f64],
    gt: &mut [f64],
) {
    match kind {
        ModelKind::TransE => {
            for i in 0..dim {
                let d = h[i] + r[i] - t[i];
                let s = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                gh[i] -= scale * s;
                gr[i] -= scale * s;
                gt[i] += scale * s;
            }
        }
        ModelKind::ComplEx => {
            let (hr, hi) = h.split_at(dim);
            let (rr, ri) = r.split_at(dim);
            let (tr, ti) = t.split_at(dim);
            for i in 0..dim {
                gh[i] += scale * (rr[i] * tr[i] + ri[i] * ti[i]);
                gh[dim + i] += scale * (rr[i] * ti[i] - ri[i] * tr[i]);
                gr[i] += scale * (hr[i] * tr[i] + hi[i] * ti[i]);
                gr[dim + i] += scale * (hr[i] * ti[i] - hi[i] * tr[i]);
                gt[i] += scale * (hr[i] * rr[i] - hi[i] * ri[i]);
                gt[dim + i] += scale * (hi[i] * rr[i] + hr[i] * ri[i]);
            }
        }
        ModelKind::RotatE => {
            let (hr, hi) = h.split_at(dim);
            let (tr, ti) = t.split_at(dim);
            for i in 0..dim {
                let (sin, cos) = r[i].sin_cos();
                let u = hr[i] * cos - hi[i] * sin - tr[i];
                let w = hr[i] * sin + hi[i] * cos - ti[i];
                let m = u.hypot(w);
                if m == 0.0 {
                    continue;
                }
                let k = scale / m;
                gh[i] -= k * (u * cos + w * sin);
                gh[dim + i] -= k * (-u * sin + w * cos);
                gt[i] += k * u;
                gt[dim + i] += k * w;
                gr[i] -= k * (u * (-hr[i] * sin - hi[i] * cos) + w * (hr[i] * cos - hi[i] * sin));
            }
        }
    }
}

/// Wraps a phase into `[−π, π)`.
pub(crate) fn wrap_phase(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y >= PI {
        -PI
    } else {
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn model(kind: ModelKind, dim: usize, ent: Vec<f64>, rel: Vec<f64>) -> EmbeddingModel {
        EmbeddingModel::from_tables(kind, dim, ent, rel).unwrap()
    }

    #[test]
    fn score_examples() {
        let m = model(ModelKind::TransE, 2, vec![1.0, 0.0, 1.5, 0.5], vec![0.5, 0.5]);
        assert_eq!(m.score(&Triple::new(0, 0, 1)).unwrap(), 0.0);

        let c = model(ModelKind::ComplEx, 1, vec![1.0, 0.0], vec![1.0, 0.0]);
        assert_eq!(c.score(&Triple::new(0, 0, 0)).unwrap(), 1.0);

        let r = model(ModelKind::RotatE, 1, vec![0.3, -0.7], vec![0.0]);
        assert_eq!(r.score(&Triple::new(0, 0, 0)).unwrap(), 0.0);

        assert!(m.score(&Triple::new(0, 1, 1)).is_err());
        assert!(m.score(&Triple::new(0, 0, 2)).is_err());
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let a = EmbeddingModel::init(ModelKind::TransE, 64, 10, 3, &mut rng_from_seed(1)).unwrap();
        let b = EmbeddingModel::init(ModelKind::TransE, 64, 10, 3, &mut rng_from_seed(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.entity_table().len(), 10 * 64);
        assert_eq!(a.relation_table().len(), 3 * 64);
        let c = EmbeddingModel::init(ModelKind::ComplEx, 8, 10, 3, &mut rng_from_seed(1)).unwrap();
        assert_eq!(c.entity_table().len(), 10 * 16);
        assert_eq!(c.relation_table().len(), 3 * 16);
        let r = EmbeddingModel::init(ModelKind::RotatE, 8, 10, 3, &mut rng_from_seed(1)).unwrap();
        assert_eq!(r.relation_table().len(), 3 * 8);
        assert!(r.relation_table().iter().all(|p| (-PI..PI).contains(p)));
        assert!(EmbeddingModel::init(ModelKind::TransE, 0, 10, 3, &mut rng_from_seed(1)).is_err());
        assert!(EmbeddingModel::init(ModelKind::TransE, 4, 0, 3, &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn init_moments_match_uniform_law() {
        let dim = 100;
        let m = EmbeddingModel::init(ModelKind::TransE, dim, 10_000, 1, &mut rng_from_seed(3)).unwrap();
        let xs = m.entity_table();
        let n = xs.len() as f64;
        let bound = 6.0 / (dim as f64).sqrt();
        let sigma = bound / 3f64.sqrt();
        let mean = xs.iter().sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean {mean}");
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((var - sigma * sigma).abs() < 0.01 * sigma * sigma);
        assert!(xs.iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn transe_translation_invariance() {
        let mut rng = rng_from_seed(5);
        let m = EmbeddingModel::init(ModelKind::TransE, 6, 2, 1, &mut rng).unwrap();
        let c: Vec<f64> = (0..6).map(|i| 0.25 * i as f64 - 0.5).collect();
        let h: Vec<f64> = m.entity(0).iter().zip(&c).map(|(a, b)| a + b).collect();
        let t: Vec<f64> = m.entity(1).iter().zip(&c).map(|(a, b)| a + b).collect();
        let shifted = score_parts(ModelKind::TransE, 6, &h, m.relation(0), &t);
        let base = m.score(&Triple::new(0, 0, 1)).unwrap();
        assert!((shifted - base).abs() < 1e-12);
    }

    #[test]
    fn rotate_zero_phase_is_l1_of_difference() {
        let mut rng = rng_from_seed(8);
        let m = EmbeddingModel::init(ModelKind::RotatE, 5, 2, 1, &mut rng).unwrap();
        let zero = vec![0.0; 5];
        let (h, t) = (m.entity(0), m.entity(1));
        let s = score_parts(ModelKind::RotatE, 5, h, &zero, t);
        let expected: f64 = (0..5).map(|i| -(h[i] - t[i]).hypot(h[5 + i] - t[5 + i])).sum();
        assert_eq!(s, expected);
    }

    #[test]
    fn complex_is_linear_in_head() {
        let mut rng = rng_from_seed(9);
        let d = 4;
        let m = EmbeddingModel::init(ModelKind::ComplEx, d, 4, 1, &mut rng).unwrap();
        let (r, t) = (m.relation(0), m.entity(3));
        let (a, b) = (m.entity(0), m.entity(1));
        for (alpha, beta) in [(2.0, -1.0), (0.5, 0.25), (-3.0, 1.5)] {
            let mix: Vec<f64> = a.iter().zip(b).map(|(x, y)| alpha * x + beta * y).collect();
            let lhs = score_parts(ModelKind::ComplEx, d, &mix, r, t);
            let rhs = alpha * score_parts(ModelKind::ComplEx, d, a, r, t)
                + beta * score_parts(ModelKind::ComplEx, d, b, r, t);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn phase_wrapping() {
        assert_eq!(wrap_phase(0.5), 0.5);
        assert!((wrap_phase(PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert_eq!(wrap_phase(PI), -PI);
        assert!((wrap_phase(-PI - 0.1) - (PI - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
            assert_eq!(ModelKind::from_code(k.code()), Some(k));
        }
        assert!("tucker".parse::<ModelKind>().is_err());
    }
}

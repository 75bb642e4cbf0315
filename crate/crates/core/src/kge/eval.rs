//! Filtered link-prediction ranking.
//!
//! Every evaluation triple yields two queries, `(?, r, t)` and `(h, r, ?)`.
//! The true entity is ranked against all entities; in the filtered setting,
//! candidates forming a known triple (any split) are dropped. Ties count half:
//! `rank = 1 + #greater + #ties / 2`.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EmbeddingModel;
use crate::error::{Error, Result};
use crate::features::{CategoryMap, RelationCategory};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Split, Triple};

/// Known-true completions of `(h, r, ?)` and `(?, r, t)` queries.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    tails: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    heads: HashMap<(RelationId, EntityId), Vec<EntityId>>,
}

impl FilterIndex {
    /// Index over the union of all splits.
    pub fn new(graph: &KnowledgeGraph) -> Self {
        Self::from_triples(graph.triples())
    }

    pub fn from_triples<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut idx = Self::default();
        for t in triples {
            idx.tails.entry((t.head, t.relation)).or_default().push(t.tail);
            idx.heads.entry((t.relation, t.tail)).or_default().push(t.head);
        }
        for v in idx.tails.values_mut().chain(idx.heads.values_mut()) {
            v.sort_unstable();
            v.dedup();
        }
        idx
    }

    pub fn known_tails(&self, h: EntityId, r: RelationId) -> &[EntityId] {
        self.tails.get(&(h, r)).map_or(&[], Vec::as_slice)
    }

    pub fn known_heads(&self, r: RelationId, t: EntityId) -> &[EntityId] {
        self.heads.get(&(r, t)).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuerySide {
    Head,
    Tail,
}

/// Rank of the true entity for one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryRank {
    pub triple: Triple,
    pub side: QuerySide,
    pub filtered: f64,
    pub raw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    #[serde(rename = "hits@1")]
    pub hits1: f64,
    #[serde(rename = "hits@3")]
    pub hits3: f64,
    #[serde(rename = "hits@10")]
    pub hits10: f64,
    /// Evaluation triples (each contributes two queries).
    pub count: usize,
}

impl Metrics {
    /// Aggregates filtered ranks; `count` is the number of triples.
    pub fn from_ranks(ranks: &[f64], count: usize) -> Self {
        let n = ranks.len() as f64;
        let (mut mrr, mut h1, mut h3, mut h10) = (0.0, 0.0, 0.0, 0.0);
        for &r in ranks {
            mrr += 1.0 / r;
            h1 += f64::from(u8::from(r <= 1.0));
            h3 += f64::from(u8::from(r <= 3.0));
            h10 += f64::from(u8::from(r <= 10.0));
        }
        Self {
            mrr: mrr / n,
            hits1: h1 / n,
            hits3: h3 / n,
            hits10: h10 / n,
            count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSide {
    Head,
    Tail,
    BothAveraged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub side: EvalSide,
    #[serde(flatten)]
    pub overall: Metrics,
    pub per_category: BTreeMap<RelationCategory, Metrics>,
}

/// `1 + #greater + #ties/2` for the true score among candidate scores.
fn pessimistic_mean_rank(greater: usize, ties: usize) -> f64 {
    1.0 + greater as f64 + ties as f64 / 2.0
}

fn rank_one(model: &EmbeddingModel, filter: &FilterIndex, t: &Triple, side: QuerySide) -> QueryRank {
    let n = model.num_entities() as EntityId;
    let truth = model.score_unchecked(t);
    let (known, target) = match side {
        QuerySide::Tail => (filter.known_tails(t.head, t.relation), t.tail),
        QuerySide::Head => (filter.known_heads(t.relation, t.tail), t.head),
    };
    let (mut raw_gt, mut raw_eq, mut f_gt, mut f_eq) = (0usize, 0usize, 0usize, 0usize);
    for e in 0..n {
        if e == target {
            continue;
        }
        let cand = match side {
            QuerySide::Tail => Triple::new(t.head, t.relation, e),
            QuerySide::Head => Triple::new(e, t.relation, t.tail),
        };
        let s = model.score_unchecked(&cand);
        let filtered_out = known.binary_search(&e).is_ok();
        if s > truth {
            raw_gt += 1;
            f_gt += usize::from(!filtered_out);
        } else if s == truth {
            raw_eq += 1;
            f_eq += usize::from(!filtered_out);
        }
    }
    QueryRank {
        triple: *t,
        side,
        filtered: pessimistic_mean_rank(f_gt, f_eq),
        raw: pessimistic_mean_rank(raw_gt, raw_eq),
    }
}

fn check_shape(model: &EmbeddingModel, graph: &KnowledgeGraph) -> Result<()> {
    if model.num_entities() != graph.num_entities() || model.num_relations() != graph.num_relations() {
        return Err(Error::domain(format!(
            "model shape {}×{} does not match graph {}×{}",
            model.num_entities(),
            model.num_relations(),
            graph.num_entities(),
            graph.num_relations()
        )));
    }
    Ok(())
}

/// Head and tail ranks for each triple, in input order (head query first).
pub fn rank_queries(model: &EmbeddingModel, filter: &FilterIndex, triples: &[Triple]) -> Result<Vec<QueryRank>> {
    for t in triples {
        model.check_triple(t)?;
    }
    let per: Vec<[QueryRank; 2]> = triples
        .par_iter()
        .map(|t| [rank_one(model, filter, t, QuerySide::Head), rank_one(model, filter, t, QuerySide::Tail)])
        .collect();
    Ok(per.into_iter().flatten().collect())
}

/// Filtered MRR and Hits@{1,3,10} over both sides of every triple in `split`.
pub fn evaluate(model: &EmbeddingModel, graph: &KnowledgeGraph, split: Split) -> Result<EvalReport> {
    check_shape(model, graph)?;
    let triples = graph.split(split);
    if triples.is_empty() {
        return Err(Error::domain(format!("cannot evaluate on empty {} split", split.name())));
    }
    let ranks = rank_queries(model, &FilterIndex::new(graph), triples)?;
    let filtered: Vec<f64> = ranks.iter().map(|q| q.filtered).collect();
    Ok(EvalReport {
        split,
        side: EvalSide::BothAveraged,
        overall: Metrics::from_ranks(&filtered, triples.len()),
        per_category: BTreeMap::new(),
    })
}

/// [`evaluate`] plus a breakdown by relation category. Triples of relations
/// listed as unclassified (no train triples) count towards the overall
/// metrics only; a relation the map does not know at all is an error.
pub fn evaluate_by_category(
    model: &EmbeddingModel,
    graph: &KnowledgeGraph,
    split: Split,
    categories: &CategoryMap,
) -> Result<EvalReport> {
    check_shape(model, graph)?;
    let triples = graph.split(split);
    if triples.is_empty() {
        return Err(Error::domain(format!("cannot evaluate on empty {} split", split.name())));
    }
    let mut cats = Vec::with_capacity(triples.len());
    for t in triples {
        let c = categories.get(t.relation);
        if c.is_none() && !categories.unclassified.contains(&t.relation) {
            return Err(Error::domain(format!(
                "relation {:?} has no category",
                graph.relations().label(t.relation).unwrap_or("?")
            )));
        }
        cats.push(c);
    }
    let ranks = rank_queries(model, &FilterIndex::new(graph), triples)?;
    let filtered: Vec<f64> = ranks.iter().map(|q| q.filtered).collect();
    let mut grouped: BTreeMap<RelationCategory, (Vec<f64>, usize)> = BTreeMap::new();
    for (i, c) in cats.iter().enumerate() {
        let Some(c) = c else { continue };
        let g = grouped.entry(*c).or_default();
        g.0.extend_from_slice(&filtered[2 * i..2 * i + 2]);
        g.1 += 1;
    }
    Ok(EvalReport {
        split,
        side: EvalSide::BothAveraged,
        overall: Metrics::from_ranks(&filtered, triples.len()),
        per_category: grouped
            .into_iter()
            .map(|(c, (r, n))| (c, Metrics::from_ranks(&r, n)))
            .collect(),
    })
}

//! Representative selection and LIME profiles on hand-built models.

use std::collections::BTreeMap;

use kgstructlab::explain::{
    category_importance_profile, explain_triple, quantile_count, select_representatives, LimeConfig, ScoreGroup,
};
use kgstructlab::features::{CategoryMap, RelationCategory};
use kgstructlab::graph::{KnowledgeGraph, Triple, Vocab};
use kgstructlab::kge::{EmbeddingModel, ModelKind};
use kgstructlab::seed::rng_from_seed;
use rand::Rng;

fn vocab(prefix: &str, n: usize) -> Vocab {
    Vocab::from_labels((0..n).map(|i| format!("{prefix}{i}"))).unwrap()
}

/// One relation; `test` goes to the test split, a single edge to train.
fn graph(num_entities: usize, test: Vec<Triple>) -> KnowledgeGraph {
    let train = vec![Triple::new(0, 0, 1)];
    KnowledgeGraph::new(vocab("e", num_entities), vocab("r", 1), train, vec![], test).unwrap()
}

fn one_category(c: RelationCategory) -> CategoryMap {
    CategoryMap { categories: BTreeMap::from([(0, c)]), unclassified: vec![] }
}

fn fan_out(n: u32) -> Vec<Triple> {
    (1..=n).map(|t| Triple::new(0, 0, t)).collect()
}

fn random_model(kind: ModelKind, dim: usize, entities: usize, seed: u64) -> EmbeddingModel {
    let mut rng = rng_from_seed(seed);
    let ent = (0..entities * kind.entity_width(dim)).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rel = (0..kind.relation_width(dim)).map(|_| rng.random_range(-1.0..1.0)).collect();
    EmbeddingModel::from_tables(kind, dim, ent, rel).unwrap()
}

/// Independent oracle: a triple is in the top `k` when fewer than `k`
/// triples beat it (higher score, or equal score and smaller triple).
fn oracle_groups(scored: &[(f64, Triple)], k: usize) -> (Vec<Triple>, Vec<Triple>) {
    let beats = |a: &(f64, Triple), b: &(f64, Triple)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);
    let mut high: Vec<(usize, Triple)> = Vec::new();
    let mut low: Vec<(usize, Triple)> = Vec::new();
    for x in scored {
        let above = scored.iter().filter(|y| beats(y, x)).count();
        let below = scored.iter().filter(|y| beats(x, y)).count();
        if above < k {
            high.push((above, x.1));
        }
        if below < k {
            low.push((below, x.1));
        }
    }
    high.sort();
    low.sort();
    (high.into_iter().map(|p| p.1).collect(), low.into_iter().map(|p| p.1).collect())
}

#[test]
fn ten_triples_at_a_tenth_give_one_each_way() {
    let test = fan_out(10);
    let g = graph(11, test.clone());
    let m = random_model(ModelKind::TransE, 4, 11, 7);
    let reps = select_representatives(&m, &g, &one_category(RelationCategory::OneToMany), 0.1).unwrap();
    let r = &reps[&RelationCategory::OneToMany];
    assert_eq!((r.high.len(), r.low.len()), (1, 1));
    let scores: Vec<f64> = test.iter().map(|t| m.score(t).unwrap()).collect();
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let worst = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(m.score(&r.high[0]).unwrap(), best);
    assert_eq!(m.score(&r.low[0]).unwrap(), worst);
    assert_eq!(reps.len(), 1);
}

#[test]
fn equal_scores_split_by_triple_order() {
    // Identical entities and a zero relation: every TransE score is 0.
    let test = fan_out(10);
    let g = graph(11, test.clone());
    let m = EmbeddingModel::from_tables(ModelKind::TransE, 2, [0.3, -0.4].repeat(11), vec![0.0; 2]).unwrap();
    let reps = select_representatives(&m, &g, &one_category(RelationCategory::OneToMany), 0.2).unwrap();
    let r = &reps[&RelationCategory::OneToMany];
    assert_eq!(r.high, test[..2].to_vec());
    assert_eq!(r.low, vec![test[9], test[8]]);
    assert!(r.high.iter().all(|t| !r.low.contains(t)));
}

#[test]
fn random_scores_match_the_ranking_oracle() {
    for seed in 0..25u64 {
        let mut rng = rng_from_seed(1000 + seed);
        let n = rng.random_range(2..40u32);
        let q = [0.05, 0.1, 0.25, 0.5][rng.random_range(0..4)];
        let test = fan_out(n);
        let g = graph(n as usize + 1, test.clone());
        let m = random_model(ModelKind::ComplEx, 3, n as usize + 1, seed);
        let reps = select_representatives(&m, &g, &one_category(RelationCategory::OneToMany), q).unwrap();
        let r = &reps[&RelationCategory::OneToMany];
        let scored: Vec<(f64, Triple)> = test.iter().map(|t| (m.score(t).unwrap(), *t)).collect();
        let k = quantile_count(q, test.len());
        assert_eq!(k, ((q * n as f64 + 1e-9).floor() as usize).max(1));
        let (high, low) = oracle_groups(&scored, k);
        assert_eq!(r.high, high, "seed {seed}");
        assert_eq!(r.low, low, "seed {seed}");
    }
}

#[test]
fn quantile_outside_the_lower_half_is_rejected() {
    let g = graph(3, fan_out(2));
    let m = random_model(ModelKind::TransE, 2, 3, 0);
    let cats = one_category(RelationCategory::OneToOne);
    for q in [0.0, -0.1, 0.51, f64::NAN] {
        assert!(select_representatives(&m, &g, &cats, q).is_err(), "q = {q}");
    }
}

#[test]
fn small_head_and_large_tails_make_the_head_dominate() {
    // ComplEx is linear in each entity, so the head slope scales with the
    // tail norms and vice versa.
    let dim = 4;
    let mut rng = rng_from_seed(11);
    let mut ent = Vec::new();
    for e in 0..13 {
        let scale = if e == 0 { 0.05 } else { 2.0 };
        ent.extend((0..2 * dim).map(|_| scale * rng.random_range(-1.0..1.0)));
    }
    let rel = (0..2 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let m = EmbeddingModel::from_tables(ModelKind::ComplEx, dim, ent, rel).unwrap();
    let g = graph(13, fan_out(12));
    let cfg = LimeConfig { num_perturbations: 50 * 6 * dim, ..Default::default() };
    let p = category_importance_profile(&m, &g, &one_category(RelationCategory::OneToMany), 0.25, None, &cfg)
        .unwrap();
    assert_eq!(p.rows.len(), 2);
    for row in &p.rows {
        assert_eq!(row.category, RelationCategory::OneToMany);
        assert_eq!(row.group_size, 3);
        assert!(row.i_head > row.i_tail, "{row:?}");
    }
}

#[test]
fn single_triple_groups_reproduce_their_explanation() {
    let g = graph(9, fan_out(8));
    let m = random_model(ModelKind::RotatE, 3, 9, 5);
    let cfg = LimeConfig { num_perturbations: 400, seed: 9, ..Default::default() };
    let cats = one_category(RelationCategory::OneToMany);
    let reps = select_representatives(&m, &g, &cats, 0.1).unwrap();
    let p = category_importance_profile(&m, &g, &cats, 0.1, Some(1), &cfg).unwrap();
    let r = &reps[&RelationCategory::OneToMany];
    for row in &p.rows {
        let t = match row.group {
            ScoreGroup::High => r.high[0],
            ScoreGroup::Low => r.low[0],
        };
        let b = explain_triple(&m, t, &cfg).unwrap().block_importance;
        assert_eq!((row.i_head, row.i_relation, row.i_tail), (b.head, b.relation, b.tail));
        assert_eq!(row.group_size, 1);
    }
}

#[test]
fn head_and_tail_are_exchangeable_for_a_zero_translation() {
    // With r = 0 and h = t the TransE score sits on its kink: each single
    // fit is noise, but head and tail share one distribution.
    let d = 4;
    let (mut head, mut tail) = (0.0, 0.0);
    for seed in 0..400u64 {
        let mut rng = rng_from_seed(seed);
        let mut ent: Vec<f64> = (0..6 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut rel: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        ent.copy_within(0..d, d);
        rel[..d].fill(0.0);
        let m = EmbeddingModel::from_tables(ModelKind::TransE, d, ent, rel).unwrap();
        let cfg = LimeConfig { num_perturbations: 50 * 3 * d, seed, ..Default::default() };
        let b = explain_triple(&m, Triple::new(0, 0, 1), &cfg).unwrap().block_importance;
        head += b.head;
        tail += b.tail;
    }
    let gap = (head - tail).abs() / head.max(tail);
    assert!(gap < 0.10, "mean head {head} vs tail {tail}: gap {gap}");
}

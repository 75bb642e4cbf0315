//! Structural features of a (sub)graph: three Gini imbalance indices, density,
//! strongly connected component count and global clustering.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, RelationId};

/// Gini index: mean absolute pairwise difference over twice the mean.
/// Returns 0 for an all-zero input.
///
/// Evaluated in O(n log n) through the sorted-order identity
/// `ΣᵢΣⱼ|xᵢ−xⱼ| = 2·Σₖ (2k−n−1)·x₍ₖ₎` (k 1-based over the sorted values).
pub fn gini(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("gini of an empty list"));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::domain(format!("gini requires finite nonnegative values, got {bad}")));
    }
    let n = values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(k, x)| (2.0 * (k as f64 + 1.0) - n - 1.0) * x)
        .sum();
    let mean_abs_diff = 2.0 * weighted / (n * n);
    Ok(mean_abs_diff / (2.0 * total / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationCategory {
    #[serde(rename = "1-1")]
    OneToOne,
    #[serde(rename = "1-n")]
    OneToMany,
    #[serde(rename = "n-1")]
    ManyToOne,
    #[serde(rename = "n-n")]
    ManyToMany,
}

impl RelationCategory {
    pub const ALL: [RelationCategory; 4] = [
        RelationCategory::OneToOne,
        RelationCategory::OneToMany,
        RelationCategory::ManyToOne,
        RelationCategory::ManyToMany,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RelationCategory::OneToOne => "1-1",
            RelationCategory::OneToMany => "1-n",
            RelationCategory::ManyToOne => "n-1",
            RelationCategory::ManyToMany => "n-n",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RelationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RelationCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RelationCategory::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| Error::domain(format!("unknown relation category {s:?}")))
    }
}

/// Fan-out threshold separating the "1" and "n" sides of a category.
pub const DEFAULT_CATEGORY_THRESHOLD: f64 = 1.5;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryMap {
    pub categories: BTreeMap<RelationId, RelationCategory>,
    /// Relations of the vocabulary without any train triple.
    pub unclassified: Vec<RelationId>,
}

impl CategoryMap {
    pub fn get(&self, r: RelationId) -> Option<RelationCategory> {
        self.categories.get(&r).copied()
    }
}

/// Classifies relations from the train split by average fan-out:
/// tails-per-head and heads-per-tail compared against `threshold`
/// (≥ threshold counts as "n").
pub fn classify_relations(graph: &KnowledgeGraph, threshold: f64) -> Result<CategoryMap> {
    if graph.train().is_empty() {
        return Err(Error::domain("relation classification needs a nonempty train split"));
    }
    let nr = graph.num_relations();
    let mut count = vec![0usize; nr];
    let mut heads: Vec<HashSet<u32>> = vec![HashSet::new(); nr];
    let mut tails: Vec<HashSet<u32>> = vec![HashSet::new(); nr];
    for t in graph.train() {
        let r = t.relation as usize;
        count[r] += 1;
        heads[r].insert(t.head);
        tails[r].insert(t.tail);
    }
    let mut map = CategoryMap::default();
    for r in 0..nr {
        if count[r] == 0 {
            map.unclassified.push(r as RelationId);
            continue;
        }
        let tph = count[r] as f64 / heads[r].len() as f64;
        let hpt = count[r] as f64 / tails[r].len() as f64;
        let cat = match (tph >= threshold, hpt >= threshold) {
            (false, false) => RelationCategory::OneToOne,
            (true, false) => RelationCategory::OneToMany,
            (false, true) => RelationCategory::ManyToOne,
            (true, true) => RelationCategory::ManyToMany,
        };
        map.categories.insert(r as RelationId, cat);
    }
    if !map.unclassified.is_empty() {
        log::debug!("{} relation(s) have no train triples", map.unclassified.len());
    }
    Ok(map)
}

/// Train-triple counts per category, in (1-1, 1-n, n-1, n-n) order.
pub fn category_distribution(graph: &KnowledgeGraph, map: &CategoryMap) -> [u64; 4] {
    let mut counts = [0u64; 4];
    for t in graph.train() {
        if let Some(c) = map.get(t.relation) {
            counts[c.index()] += 1;
        }
    }
    counts
}

/// Distinct ordered non-loop entity pairs over `|V|·(|V|−1)`.
pub fn graph_density(graph: &KnowledgeGraph) -> Result<f64> {
    let n = graph.num_entities();
    if n < 2 {
        return Err(Error::domain("density needs at least two nodes"));
    }
    let pairs: HashSet<(u32, u32)> = graph
        .triples()
        .filter(|t| t.head != t.tail)
        .map(|t| (t.head, t.tail))
        .collect();
    Ok(pairs.len() as f64 / (n as f64 * (n as f64 - 1.0)))
}

/// Directed adjacency with relations and parallel edges collapsed.
fn directed_adjacency(graph: &KnowledgeGraph) -> Vec<Vec<u32>> {
    let mut adj = vec![Vec::new(); graph.num_entities()];
    for t in graph.triples() {
        adj[t.head as usize].push(t.tail);
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

/// Tarjan's algorithm, iterative. Returns the component id of every node.
pub fn strongly_connected_components(adj: &[Vec<u32>]) -> (usize, Vec<usize>) {
    const UNVISITED: usize = usize::MAX;
    let n = adj.len();
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comp = vec![UNVISITED; n];
    let mut next_index = 0;
    let mut count = 0;
    // (node, position in its adjacency list)
    let mut call: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        call.push((root, 0));
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if *pos < adj[v].len() {
                let w = adj[v][*pos] as usize;
                *pos += 1;
                if index[w] == UNVISITED {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    loop {
                        let w = stack.pop().expect("tarjan stack holds v");
                        on_stack[w] = false;
                        comp[w] = count;
                        if w == v {
                            break;
                        }
                    }
                    count += 1;
                }
            }
        }
    }
    (count, comp)
}

/// Number of strongly connected components of the directed projection.
pub fn scc_count(graph: &KnowledgeGraph) -> Result<usize> {
    if graph.num_entities() == 0 {
        return Err(Error::domain("scc count of an empty graph"));
    }
    Ok(strongly_connected_components(&directed_adjacency(graph)).0)
}

/// Transitivity of the undirected simple projection:
/// `3·triangles / Σ_v C(deg v, 2)`, 0 when there are no wedges.
pub fn global_clustering(graph: &KnowledgeGraph) -> Result<f64> {
    let n = graph.num_entities();
    if n == 0 {
        return Err(Error::domain("clustering of an empty graph"));
    }
    let mut wedges = 0u64;
    let mut triangles = 0u64;
    let mut mark = vec![false; n];
    for v in 0..n as u32 {
        let nv = graph.neighbors(v);
        let d = nv.len() as u64;
        wedges += d * d.saturating_sub(1) / 2;
        for &u in nv {
            mark[u as usize] = true;
        }
        // count each triangle once as v < u < w
        for &u in nv.iter().filter(|&&u| u > v) {
            for &w in graph.neighbors(u).iter().filter(|&&w| w > u) {
                if mark[w as usize] {
                    triangles += 1;
                }
            }
        }
        for &u in nv {
            mark[u as usize] = false;
        }
    }
    if wedges == 0 {
        return Ok(0.0);
    }
    Ok(3.0 * triangles as f64 / wedges as f64)
}

pub const FEATURE_NAMES: [&str; 6] = [
    "category_gini",
    "relation_type_gini",
    "degree_gini",
    "density",
    "scc_count",
    "global_clustering",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralFeatures {
    pub category_gini: f64,
    pub relation_type_gini: f64,
    pub degree_gini: f64,
    pub density: f64,
    pub scc_count: usize,
    pub global_clustering: f64,
}

impl StructuralFeatures {
    /// Features in [`FEATURE_NAMES`] order.
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.category_gini,
            self.relation_type_gini,
            self.degree_gini,
            self.density,
            self.scc_count as f64,
            self.global_clustering,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            category_gini: a[0],
            relation_type_gini: a[1],
            degree_gini: a[2],
            density: a[3],
            scc_count: a[4].round() as usize,
            global_clustering: a[5],
        }
    }
}

/// Computes all six features. The category and relation-type indices use the
/// train split; the remaining ones use the union of all splits.
pub fn compute_features(graph: &KnowledgeGraph, threshold: f64) -> Result<StructuralFeatures> {
    let map = classify_relations(graph, threshold)?;
    let cat_counts = category_distribution(graph, &map);
    let category_gini = gini(&cat_counts.map(|c| c as f64))?;

    let mut per_relation = vec![0u64; graph.num_relations()];
    for t in graph.train() {
        per_relation[t.relation as usize] += 1;
    }
    let present: Vec<f64> = per_relation.iter().filter(|&&c| c > 0).map(|&c| c as f64).collect();
    let relation_type_gini = gini(&present)?;

    let degrees: Vec<f64> = graph.degrees().into_iter().map(|d| d as f64).collect();
    let degree_gini = gini(&degrees)?;

    Ok(StructuralFeatures {
        category_gini,
        relation_type_gini,
        degree_gini,
        density: graph_density(graph)?,
        scc_count: scc_count(graph)?,
        global_clustering: global_clustering(graph)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Triple, Vocab};
    use crate::synthetic::random_graph;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn gini_double_loop(x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        if mean == 0.0 {
            return 0.0;
        }
        let mut s = 0.0;
        for a in x {
            for b in x {
                s += (a - b).abs();
            }
        }
        s / (n * n) / (2.0 * mean)
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[5.0, 5.0, 5.0, 5.0]).unwrap(), 0.0);
        assert!((gini(&[1.0, 0.0, 0.0, 0.0]).unwrap() - 0.75).abs() < 1e-15);
        assert!((gini(&[1.0, 2.0, 3.0]).unwrap() - 2.0 / 9.0).abs() < 1e-15);
        assert_eq!(gini(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(gini(&[]).is_err());
        assert!(gini(&[1.0, -1.0]).is_err());
        assert!(gini(&[f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn gini_matches_double_loop(x in prop::collection::vec(0.0f64..100.0, 1..40)) {
            prop_assert!((gini(&x).unwrap() - gini_double_loop(&x)).abs() < 1e-12);
        }

        #[test]
        fn gini_is_permutation_invariant(mut x in prop::collection::vec(0.0f64..10.0, 1..20), seed in any::<u64>()) {
            let g = gini(&x).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(x.as_mut_slice(), &mut rng);
            prop_assert!((gini(&x).unwrap() - g).abs() < 1e-12);
        }
    }

    fn graph_of(n: usize, edges: &[(u32, u32, u32)]) -> KnowledgeGraph {
        let nr = edges.iter().map(|e| e.1).max().map_or(1, |m| m as usize + 1);
        KnowledgeGraph::new(
            Vocab::from_labels((0..n).map(|i| format!("e{i}"))).unwrap(),
            Vocab::from_labels((0..nr).map(|i| format!("r{i}"))).unwrap(),
            edges.iter().map(|&(h, r, t)| Triple::new(h, r, t)).collect(),
            vec![],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn classification_rules() {
        let single = graph_of(2, &[(0, 0, 1)]);
        let m = classify_relations(&single, 1.5).unwrap();
        assert_eq!(m.get(0), Some(RelationCategory::OneToOne));

        let one_n = graph_of(4, &[(0, 0, 1), (0, 0, 2), (0, 0, 3)]);
        assert_eq!(classify_relations(&one_n, 1.5).unwrap().get(0), Some(RelationCategory::OneToMany));

        // tph = 3/2 = 1.5 exactly sits on the "n" side
        let boundary = graph_of(5, &[(0, 0, 1), (0, 0, 2), (3, 0, 4)]);
        assert_eq!(classify_relations(&boundary, 1.5).unwrap().get(0), Some(RelationCategory::OneToMany));

        let n_one = graph_of(4, &[(1, 0, 0), (2, 0, 0), (3, 0, 0)]);
        assert_eq!(classify_relations(&n_one, 1.5).unwrap().get(0), Some(RelationCategory::ManyToOne));

        let n_n = graph_of(4, &[(0, 0, 2), (0, 0, 3), (1, 0, 2), (1, 0, 3)]);
        assert_eq!(classify_relations(&n_n, 1.5).unwrap().get(0), Some(RelationCategory::ManyToMany));
    }

    #[test]
    fn relations_without_train_triples_are_reported() {
        let g = KnowledgeGraph::from_labeled(&[("a", "r1", "b")], &[("a", "r2", "b")], &[]);
        let m = classify_relations(&g, 1.5).unwrap();
        assert_eq!(m.unclassified, vec![1]);
        assert_eq!(m.categories.len(), 1);
    }

    #[test]
    fn distribution_from_templates() {
        // 1-1: 2 triples, 1-n: 3, n-1: 3, n-n: 4
        let g = graph_of(
            12,
            &[
                (0, 0, 1), (2, 0, 3),
                (4, 1, 5), (4, 1, 6), (4, 1, 7),
                (5, 2, 8), (6, 2, 8), (7, 2, 8),
                (9, 3, 11), (9, 3, 0), (10, 3, 11), (10, 3, 0),
            ],
        );
        let m = classify_relations(&g, 1.5).unwrap();
        assert_eq!(category_distribution(&g, &m), [2, 3, 3, 4]);
        assert_eq!(category_distribution(&graph_of(2, &[(0, 0, 1)]), &classify_relations(&graph_of(2, &[(0, 0, 1)]), 1.5).unwrap()), [1, 0, 0, 0]);
    }

    #[test]
    fn density_examples() {
        let complete = graph_of(3, &[(0, 0, 1), (1, 0, 0), (0, 0, 2), (2, 0, 0), (1, 0, 2), (2, 0, 1)]);
        assert_eq!(graph_density(&complete).unwrap(), 1.0);
        let parallel = graph_of(3, &[(0, 0, 1), (0, 1, 1)]);
        assert!((graph_density(&parallel).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(graph_density(&graph_of(3, &[(0, 0, 0)])).unwrap(), 0.0);
        assert!(graph_density(&graph_of(1, &[(0, 0, 0)])).is_err());
    }

    #[test]
    fn scc_examples() {
        assert_eq!(scc_count(&graph_of(3, &[(0, 0, 1), (1, 0, 2), (2, 0, 0)])).unwrap(), 1);
        assert_eq!(scc_count(&graph_of(3, &[(0, 0, 1), (1, 0, 2)])).unwrap(), 3);
    }

    #[test]
    fn scc_handles_long_chains_without_recursion() {
        let n = 200_000u32;
        let edges: Vec<(u32, u32, u32)> = (0..n - 1).map(|i| (i, 0, i + 1)).collect();
        assert_eq!(scc_count(&graph_of(n as usize, &edges)).unwrap(), n as usize);
        let mut cycle = edges.clone();
        cycle.push((n - 1, 0, 0));
        assert_eq!(scc_count(&graph_of(n as usize, &cycle)).unwrap(), 1);
    }

    #[test]
    fn clustering_examples() {
        assert_eq!(global_clustering(&graph_of(3, &[(0, 0, 1), (1, 0, 2), (2, 0, 0)])).unwrap(), 1.0);
        assert_eq!(global_clustering(&graph_of(4, &[(0, 0, 1), (0, 0, 2), (0, 0, 3)])).unwrap(), 0.0);
        // K4 minus edge (2,3): 2 triangles, wedges 3+3+1+1 = 8
        let k4m = graph_of(4, &[(0, 0, 1), (0, 0, 2), (0, 0, 3), (1, 0, 2), (1, 0, 3)]);
        assert!((global_clustering(&k4m).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn feature_examples() {
        // single relation of one category: one-hot category vector
        let g = KnowledgeGraph::from_labeled(&[("a", "r", "b"), ("b", "r", "c")], &[], &[]);
        let f = compute_features(&g, 1.5).unwrap();
        assert!((f.category_gini - 0.75).abs() < 1e-15);
        assert_eq!(f.relation_type_gini, 0.0);
    }

    #[test]
    fn balanced_categories_have_zero_gini() {
        let g = graph_of(
            11,
            &[
                (0, 0, 1), (2, 0, 3), (9, 0, 10),
                (4, 1, 5), (4, 1, 6), (4, 1, 7),
                (5, 2, 8), (6, 2, 8), (7, 2, 8),
                (9, 3, 10), (9, 3, 5), (10, 3, 5),
            ],
        );
        let m = classify_relations(&g, 1.5).unwrap();
        assert_eq!(category_distribution(&g, &m), [3, 3, 3, 3]);
        assert_eq!(compute_features(&g, 1.5).unwrap().category_gini, 0.0);
    }

    #[test]
    fn features_are_relabeling_invariant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let g = random_graph(&mut rng, 25, 4, 0.1);
            let f = compute_features(&g, 1.5).unwrap();
            // reverse entity and relation ids
            let ne = g.num_entities() as u32;
            let nr = g.num_relations() as u32;
            let flip = |ts: &[Triple]| -> Vec<Triple> {
                ts.iter()
                    .map(|t| Triple::new(ne - 1 - t.head, nr - 1 - t.relation, ne - 1 - t.tail))
                    .collect()
            };
            let h = KnowledgeGraph::new(
                g.entities().clone(),
                g.relations().clone(),
                flip(g.train()),
                flip(g.split(crate::graph::Split::Valid)),
                flip(g.split(crate::graph::Split::Test)),
            )
            .unwrap();
            let f2 = compute_features(&h, 1.5).unwrap();
            for (a, b) in f.to_array().iter().zip(f2.to_array()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dag_and_tree_properties() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            // edges only from lower to higher id: a DAG
            let g = random_graph(&mut rng, 30, 2, 0.15);
            let dag: Vec<(u32, u32, u32)> = g
                .triples()
                .filter(|t| t.head < t.tail)
                .map(|t| (t.head, t.relation, t.tail))
                .collect();
            assert_eq!(scc_count(&graph_of(30, &dag)).unwrap(), 30);

            let tree = crate::synthetic::random_connected_graph(&mut rng, 30, 0, 2);
            assert_eq!(global_clustering(&tree).unwrap(), 0.0);
        }
    }
}

//! Connected-subgraph sampling by breadth-first expansion from a high-degree
//! start node.
//!
//! A sample draws a size ratio `r ~ U[r_min, r_max]`, targets `⌈r·|V|⌉`
//! nodes, picks a start node uniformly among the `k` highest-degree entities
//! and grows the node set by BFS. Each expansion admits the whole batch of
//! unvisited neighbors of the dequeued node (in ascending id order), so the
//! final size may overshoot the target by at most one batch. If the start
//! component is exhausted first, the sample is returned smaller than
//! requested with `exhausted` set; it never jumps to another component.

use std::collections::VecDeque;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, SubgraphSample};
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerParams {
    pub r_min: f64,
    pub r_max: f64,
    /// Size of the high-degree candidate set for the start node.
    pub k: usize,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            r_min: 0.05,
            r_max: 0.5,
            k: 100,
        }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_min <= self.r_max && self.r_max <= 1.0) {
            return Err(Error::domain(format!(
                "sampler ratios must satisfy 0 < r_min <= r_max <= 1, got [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        if self.k == 0 {
            return Err(Error::domain("candidate set size k must be positive"));
        }
        Ok(())
    }
}

/// The `k` highest-degree entities, degree descending, ties by ascending id.
/// `k > |V|` is clamped.
pub fn candidate_set(graph: &KnowledgeGraph, k: usize) -> Result<Vec<EntityId>> {
    if k == 0 {
        return Err(Error::domain("candidate set size k must be positive"));
    }
    let n = graph.num_entities();
    if n == 0 {
        return Err(Error::domain("graph has no entities"));
    }
    if k > n {
        log::warn!("candidate set size {k} exceeds |V| = {n}; clamping");
    }
    let degrees = graph.degrees();
    let mut order: Vec<EntityId> = (0..n as EntityId).collect();
    order.sort_by(|&a, &b| degrees[b as usize].cmp(&degrees[a as usize]).then(a.cmp(&b)));
    order.truncate(k.min(n));
    Ok(order)
}

pub fn target_size(ratio: f64, num_entities: usize) -> usize {
    (ratio * num_entities as f64).ceil() as usize
}

/// BFS from `start` until at least `target` nodes are visited or the
/// component is exhausted. Returns the visited set in admission order.
pub fn bfs_expand(graph: &KnowledgeGraph, start: EntityId, target: usize) -> Vec<EntityId> {
    let mut visited = vec![false; graph.num_entities()];
    let mut order = vec![start];
    visited[start as usize] = true;
    let mut queue = VecDeque::from([start]);
    while order.len() < target {
        let Some(u) = queue.pop_front() else { break };
        // neighbor lists are sorted ascending
        for &v in graph.neighbors(u) {
            if !visited[v as usize] {
                visited[v as usize] = true;
                order.push(v);
                queue.push_back(v);
            }
        }
    }
    order
}

/// Draws one connected sample. The ratio is drawn from `rng` first, then the
/// start node.
pub fn sample_subgraph<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    params: &SamplerParams,
    rng: &mut R,
) -> Result<SubgraphSample> {
    params.validate()?;
    let n = graph.num_entities();
    if n == 0 {
        return Err(Error::domain("cannot sample from an empty graph"));
    }
    let ratio = if params.r_min == params.r_max {
        params.r_min
    } else {
        rng.random_range(params.r_min..=params.r_max)
    };
    let target = target_size(ratio, n);
    let candidates = candidate_set(graph, params.k)?;
    let start = candidates[rng.random_range(0..candidates.len())];

    let nodes = bfs_expand(graph, start, target);
    let exhausted = nodes.len() < target;
    if exhausted {
        log::warn!(
            "component of start node {start} exhausted at {} of {target} requested nodes",
            nodes.len()
        );
    }
    let mut sample = graph.induce(&nodes)?;
    sample.meta.requested_ratio = ratio;
    sample.meta.achieved_ratio = sample.nodes.len() as f64 / n as f64;
    sample.meta.start_node = Some(start);
    sample.meta.exhausted = exhausted;
    debug_assert!(sample.meta.connected, "BFS samples are connected by construction");
    Ok(sample)
}

pub fn sample_seed(master_seed: u64, index: usize) -> u64 {
    derive_seed(master_seed, &[index as u64])
}

/// Draws `count` samples with per-index seeds derived from `master_seed`.
/// Output order is the sample index regardless of how the work is scheduled.
pub fn generate_corpus(
    graph: &KnowledgeGraph,
    count: usize,
    params: &SamplerParams,
    master_seed: u64,
) -> Result<Vec<SubgraphSample>> {
    if count == 0 {
        return Err(Error::domain("corpus size must be at least 1"));
    }
    params.validate()?;
    let min_target = target_size(params.r_min, graph.num_entities());
    if min_target < 2 {
        return Err(Error::domain(format!(
            "graph too small for r_min = {}: target of {min_target} node(s) with |V| = {}",
            params.r_min,
            graph.num_entities()
        )));
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let seed = sample_seed(master_seed, i);
            let mut rng = rng_from_seed(seed);
            let mut s = sample_subgraph(graph, params, &mut rng)?;
            s.meta.seed = Some(seed);
            if let Some(reason) = s.unusable_reason() {
                log::warn!("sample {i} unusable: {reason}");
            }
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Split;
    use crate::synthetic::{random_connected_graph, random_graph};
    use rand::SeedableRng;

    fn path5() -> KnowledgeGraph {
        KnowledgeGraph::from_labeled(
            &[("a", "r", "b"), ("b", "r", "c"), ("c", "r", "d"), ("d", "r", "e")],
            &[],
            &[],
        )
    }

    #[test]
    fn star_candidate() {
        let g = KnowledgeGraph::from_labeled(
            &[("l1", "r", "hub"), ("hub", "r", "l2"), ("hub", "r", "l3"), ("l4", "r", "hub"), ("hub", "r", "l5")],
            &[],
            &[],
        );
        let hub = g.entities().get("hub").unwrap();
        assert_eq!(candidate_set(&g, 1).unwrap(), vec![hub]);
        let all = candidate_set(&g, 50).unwrap();
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], hub);
        assert!(candidate_set(&g, 0).is_err());
    }

    #[test]
    fn candidate_set_matches_sorted_degree_table() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let g = random_graph(&mut rng, 50, 3, 0.05);
            let mut table: Vec<(usize, u32)> = (0..50u32)
                .map(|v| {
                    let nb: std::collections::BTreeSet<u32> = g
                        .triples()
                        .filter_map(|t| {
                            if t.head == v && t.tail != v {
                                Some(t.tail)
                            } else if t.tail == v && t.head != v {
                                Some(t.head)
                            } else {
                                None
                            }
                        })
                        .collect();
                    (nb.len(), v)
                })
                .collect();
            table.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let expected: Vec<u32> = table.iter().take(10).map(|x| x.1).collect();
            assert_eq!(candidate_set(&g, 10).unwrap(), expected);
        }
    }

    #[test]
    fn full_ratio_covers_path() {
        let g = path5();
        let params = SamplerParams { r_min: 1.0, r_max: 1.0, k: 5 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let s = sample_subgraph(&g, &params, &mut rng).unwrap();
        assert_eq!(s.nodes.len(), 5);
        assert!(s.meta.connected);
        assert!(!s.meta.exhausted);
        assert_eq!(s.meta.achieved_ratio, 1.0);
    }

    #[test]
    fn exhaustion_stops_in_start_component() {
        let g = KnowledgeGraph::from_labeled(
            &[
                ("a", "r", "b"), ("b", "r", "c"), ("c", "r", "a"),
                ("x", "r", "y"), ("y", "r", "z"), ("z", "r", "x"),
            ],
            &[],
            &[],
        );
        let params = SamplerParams { r_min: 1.0, r_max: 1.0, k: 6 };
        for seed in 0..10 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s = sample_subgraph(&g, &params, &mut rng).unwrap();
            assert_eq!(s.nodes.len(), 3);
            assert_eq!(s.meta.achieved_ratio, 0.5);
            assert!(s.meta.exhausted);
            assert!(s.meta.connected);
        }
    }

    #[test]
    fn size_window_with_overshoot() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for seed in 0..20 {
            let g = random_connected_graph(&mut rng, 100, 80, 3);
            let max_batch = g.degrees().into_iter().max().unwrap();
            let params = SamplerParams { r_min: 0.3, r_max: 0.3, k: 10 };
            let mut srng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s = sample_subgraph(&g, &params, &mut srng).unwrap();
            assert!(s.nodes.len() >= 30 && s.nodes.len() < 30 + max_batch, "{}", s.nodes.len());
            assert!(crate::graph::is_connected(&s.nodes, s.splits.iter().flatten()));
        }
    }

    #[test]
    fn corpus_is_deterministic_and_ordered() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let g = random_connected_graph(&mut rng, 300, 400, 4);
        let params = SamplerParams::default();
        let a = generate_corpus(&g, 20, &params, 77).unwrap();
        let b = generate_corpus(&g, 20, &params, 77).unwrap();
        assert_eq!(a, b);
        for (i, s) in a.iter().enumerate() {
            assert_eq!(s.meta.seed, Some(sample_seed(77, i)));
            assert!(s.meta.requested_ratio >= params.r_min && s.meta.requested_ratio <= params.r_max);
            if !s.meta.exhausted {
                assert!(s.meta.achieved_ratio >= s.meta.requested_ratio);
            }
        }
        let c = generate_corpus(&g, 20, &params, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tiny_graph_is_rejected() {
        let g = KnowledgeGraph::from_labeled(&[("a", "r", "b")], &[], &[]);
        let params = SamplerParams { r_min: 0.05, r_max: 0.5, k: 1 };
        assert!(generate_corpus(&g, 3, &params, 0).is_err());
        assert!(generate_corpus(&path5(), 0, &SamplerParams::default(), 0).is_err());
    }

    #[test]
    fn unusable_samples_are_flagged() {
        // everything in train: every sample lacks valid/test triples
        let g = path5();
        let params = SamplerParams { r_min: 0.5, r_max: 0.5, k: 2 };
        let corpus = generate_corpus(&g, 3, &params, 1).unwrap();
        for s in &corpus {
            assert!(!s.is_usable());
            assert!(s.split(Split::Valid).is_empty());
        }
    }
}

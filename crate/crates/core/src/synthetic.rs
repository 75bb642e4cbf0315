//! Synthetic graph generators used by tests, benchmarks and desk-scale studies.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{KnowledgeGraph, Triple, Vocab};
use crate::seed::rng_from_seed;

fn assemble(
    num_entities: usize,
    num_relations: usize,
    entity_label: impl Fn(usize) -> String,
    relation_label: impl Fn(usize) -> String,
    splits: [Vec<Triple>; 3],
) -> KnowledgeGraph {
    let entities = Vocab::from_labels((0..num_entities).map(entity_label)).expect("unique labels");
    let relations = Vocab::from_labels((0..num_relations).map(relation_label)).expect("unique labels");
    let [train, valid, test] = splits;
    KnowledgeGraph::new(entities, relations, train, valid, test).expect("generated ids are valid")
}

/// Erdős–Rényi style directed multigraph: each ordered pair (self-loops
/// included) receives a triple with probability `p`, with a uniform relation
/// and a uniform 80/10/10 split assignment.
pub fn random_graph<R: Rng + ?Sized>(
    rng: &mut R,
    num_entities: usize,
    num_relations: usize,
    p: f64,
) -> KnowledgeGraph {
    let mut splits: [Vec<Triple>; 3] = Default::default();
    for h in 0..num_entities as u32 {
        for t in 0..num_entities as u32 {
            if rng.random_bool(p) {
                let r = rng.random_range(0..num_relations as u32);
                let u: f64 = rng.random();
                let slot = if u < 0.8 { 0 } else if u < 0.9 { 1 } else { 2 };
                splits[slot].push(Triple::new(h, r, t));
            }
        }
    }
    assemble(num_entities, num_relations, |i| format!("e{i}"), |i| format!("r{i}"), splits)
}

/// Random spanning tree (random orientation) plus `extra_edges` random
/// triples; all triples go to train.
pub fn random_connected_graph<R: Rng + ?Sized>(
    rng: &mut R,
    num_entities: usize,
    extra_edges: usize,
    num_relations: usize,
) -> KnowledgeGraph {
    let mut order: Vec<u32> = (0..num_entities as u32).collect();
    order.shuffle(rng);
    let mut train = Vec::new();
    for i in 1..order.len() {
        let parent = order[rng.random_range(0..i)];
        let child = order[i];
        let r = rng.random_range(0..num_relations as u32);
        if rng.random_bool(0.5) {
            train.push(Triple::new(parent, r, child));
        } else {
            train.push(Triple::new(child, r, parent));
        }
    }
    for _ in 0..extra_edges {
        let h = rng.random_range(0..num_entities as u32);
        let t = rng.random_range(0..num_entities as u32);
        let r = rng.random_range(0..num_relations as u32);
        train.push(Triple::new(h, r, t));
    }
    assemble(
        num_entities,
        num_relations,
        |i| format!("e{i}"),
        |i| format!("r{i}"),
        [train, Vec::new(), Vec::new()],
    )
}

/// Pair indices of [`bijection_pairs`] held out as test and valid triples.
pub const BIJECTION_TEST_PAIRS: [usize; 3] = [2, 5, 8];
pub const BIJECTION_VALID_PAIRS: [usize; 1] = [7];

/// The trainability toy: entities `a_0..a_{m-1}, b_0..b_{m-1}` with
/// `m = pairs`, relation `maps_to` sending `a_i → b_i` and `maps_from`
/// sending `b_i → a_i`. Every `maps_from` link is trained; the `maps_to`
/// links listed in [`BIJECTION_TEST_PAIRS`] / [`BIJECTION_VALID_PAIRS`] are
/// held out. A translation model represents the whole graph exactly
/// (`r_from = −r_to`), so the held-out links are inferable from the rest.
/// Entity ids: `a_i = i`, `b_i = m + i`.
pub fn bijection_pairs(pairs: usize) -> KnowledgeGraph {
    let mut splits: [Vec<Triple>; 3] = Default::default();
    let m = pairs as u32;
    for i in 0..pairs {
        let (a, b) = (i as u32, m + i as u32);
        let slot = if BIJECTION_TEST_PAIRS.contains(&i) {
            2
        } else if BIJECTION_VALID_PAIRS.contains(&i) {
            1
        } else {
            0
        };
        splits[slot].push(Triple::new(a, 0, b));
        splits[0].push(Triple::new(b, 1, a));
    }
    assemble(
        2 * pairs,
        2,
        |i| if i < pairs { format!("a{i}") } else { format!("b{}", i - pairs) },
        |r| if r == 0 { "maps_to".to_owned() } else { "maps_from".to_owned() },
        splits,
    )
}

/// Parameters of [`category_family`].
///
/// The graph is a line of communities joined by a few bridge links. Every
/// community carries the same small set of structured relations: a
/// one-to-one `twin` pairing with its inverse `twin_of`, a one-to-many
/// grouping and a many-to-one grouping. Community `q` additionally carries a
/// number of random many-to-many links that grows linearly from `nn_min` to
/// `nn_max` along the line, so subgraphs drawn from different regions differ
/// mainly in how skewed their relation-category distribution is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CategoryFamilyParams {
    pub communities: usize,
    pub community_size: usize,
    pub nn_relations: usize,
    pub nn_min: usize,
    pub nn_max: usize,
    pub bridges: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for CategoryFamilyParams {
    fn default() -> Self {
        Self {
            communities: 6,
            community_size: 50,
            nn_relations: 3,
            nn_min: 40,
            nn_max: 600,
            bridges: 2,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

const TWIN: u32 = 0;
const TWIN_OF: u32 = 1;
const ONE_TO_MANY: u32 = 2;
const MANY_TO_ONE: u32 = 3;
const BRIDGE: u32 = 4;
const NN_BASE: u32 = 5;

/// Builds the controlled category-imbalance family described on
/// [`CategoryFamilyParams`]. Relation ids: `twin`, `twin_of`, `has_part`
/// (one-to-many), `part_of_group` (many-to-one), `bridge`, then the
/// many-to-many relations. Bridges are always train triples.
pub fn category_family(params: &CategoryFamilyParams) -> KnowledgeGraph {
    let mut rng = rng_from_seed(params.seed);
    let size = params.community_size;
    let num_relations = NN_BASE as usize + params.nn_relations;

    let mut triples = Vec::new();
    for q in 0..params.communities {
        let base = (q * size) as u32;
        let ent = |i: usize| base + i as u32;
        for g in 0..size / 2 {
            triples.push(Triple::new(ent(2 * g), TWIN, ent(2 * g + 1)));
            triples.push(Triple::new(ent(2 * g + 1), TWIN_OF, ent(2 * g)));
        }
        // one head, three distinct tails per group of four
        for g in 0..size / 4 {
            for j in 1..4 {
                triples.push(Triple::new(ent(4 * g), ONE_TO_MANY, ent(4 * g + j)));
            }
        }
        // three heads share one tail per group of five
        for g in 0..size / 5 {
            for j in 0..3 {
                triples.push(Triple::new(ent(5 * g + j), MANY_TO_ONE, ent(5 * g + 4)));
            }
        }
        let nn = if params.communities > 1 {
            params.nn_min + (params.nn_max - params.nn_min) * q / (params.communities - 1)
        } else {
            params.nn_min
        };
        if params.nn_relations > 0 && size > 1 {
            let mut added = std::collections::HashSet::new();
            let mut attempts = 0;
            while added.len() < nn && attempts < 50 * nn + 100 {
                attempts += 1;
                let h = rng.random_range(0..size);
                let t = rng.random_range(0..size);
                if h == t {
                    continue;
                }
                let r = NN_BASE + rng.random_range(0..params.nn_relations as u32);
                if added.insert((h, r, t)) {
                    triples.push(Triple::new(ent(h), r, ent(t)));
                }
            }
        }
        if q + 1 < params.communities {
            for _ in 0..params.bridges {
                let h = ent(rng.random_range(0..size));
                let t = base + size as u32 + rng.random_range(0..size as u32);
                triples.push(Triple::new(h, BRIDGE, t));
            }
        }
    }

    let mut splits: [Vec<Triple>; 3] = Default::default();
    for t in triples {
        let u: f64 = rng.random();
        let slot = if t.relation == BRIDGE || u >= params.valid_fraction + params.test_fraction {
            0
        } else if u < params.valid_fraction {
            1
        } else {
            2
        };
        splits[slot].push(t);
    }

    let n = params.communities * size;
    assemble(
        n,
        num_relations,
        |i| format!("c{}_e{}", i / size, i % size),
        |r| match r as u32 {
            TWIN => "twin".to_owned(),
            TWIN_OF => "twin_of".to_owned(),
            ONE_TO_MANY => "has_part".to_owned(),
            MANY_TO_ONE => "part_of_group".to_owned(),
            BRIDGE => "bridge".to_owned(),
            r => format!("related_{}", r - NN_BASE),
        },
        splits,
    )
}

//! Integer-indexed multi-relational graphs with train/valid/test splits.
//!
//! Entities and relations are interned into dense `u32` ids in order of first
//! appearance (train, then valid, then test). The graph is immutable once
//! built and carries two derived indices: the full incidence list per entity
//! and the sorted distinct-neighbor set used for degree computations.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Label ↔ id bimap.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::new();
        for label in labels {
            let label = label.into();
            if vocab.index.contains_key(&label) {
                return Err(Error::domain(format!("duplicate vocabulary label {label:?}")));
            }
            vocab.intern(&label);
        }
        Ok(vocab)
    }

    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Out,
    In,
}

/// One incidence of an entity: the other endpoint, the relation and which
/// end of the triple the owning entity sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Adjacent {
    pub neighbor: EntityId,
    pub relation: RelationId,
    pub direction: Direction,
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    splits: [Vec<Triple>; 3],
    adjacency: Vec<Vec<Adjacent>>,
    neighbors: Vec<Vec<EntityId>>,
}

impl KnowledgeGraph {
    /// Builds a graph from vocabularies and id-level splits. Duplicate triples
    /// within a split are dropped (first occurrence kept).
    pub fn new(
        entities: Vocab,
        relations: Vocab,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        Self::build(entities, relations, [train, valid, test]).map(|(g, _)| g)
    }

    fn build(
        entities: Vocab,
        relations: Vocab,
        splits: [Vec<Triple>; 3],
    ) -> Result<(Self, usize)> {
        let n = entities.len();
        let nr = relations.len();
        let mut dropped = 0;
        let mut clean: [Vec<Triple>; 3] = Default::default();
        for (slot, triples) in clean.iter_mut().zip(splits) {
            let mut seen = HashSet::with_capacity(triples.len());
            for t in triples {
                if t.head as usize >= n || t.tail as usize >= n {
                    return Err(Error::domain(format!("triple {t} references an unknown entity")));
                }
                if t.relation as usize >= nr {
                    return Err(Error::domain(format!("triple {t} references an unknown relation")));
                }
                if seen.insert(t) {
                    slot.push(t);
                } else {
                    dropped += 1;
                }
            }
        }

        let mut adjacency = vec![Vec::new(); n];
        for t in clean.iter().flatten() {
            adjacency[t.head as usize].push(Adjacent {
                neighbor: t.tail,
                relation: t.relation,
                direction: Direction::Out,
            });
            adjacency[t.tail as usize].push(Adjacent {
                neighbor: t.head,
                relation: t.relation,
                direction: Direction::In,
            });
        }
        let neighbors = adjacency
            .iter()
            .enumerate()
            .map(|(v, adj)| {
                let mut ns: Vec<EntityId> = adj
                    .iter()
                    .map(|a| a.neighbor)
                    .filter(|&u| u as usize != v)
                    .collect();
                ns.sort_unstable();
                ns.dedup();
                ns
            })
            .collect();

        Ok((
            Self {
                entities,
                relations,
                splits: clean,
                adjacency,
                neighbors,
            },
            dropped,
        ))
    }

    /// Convenience constructor from labeled triples; vocabularies are
    /// assigned by first appearance across train, valid, test.
    pub fn from_labeled(
        train: &[(&str, &str, &str)],
        valid: &[(&str, &str, &str)],
        test: &[(&str, &str, &str)],
    ) -> Self {
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let mut intern = |rows: &[(&str, &str, &str)]| -> Vec<Triple> {
            rows.iter()
                .map(|(h, r, t)| {
                    let h = entities.intern(h);
                    let r = relations.intern(r);
                    let t = entities.intern(t);
                    Triple::new(h, r, t)
                })
                .collect()
        };
        let train = intern(train);
        let valid = intern(valid);
        let test = intern(test);
        Self::new(entities, relations, train, valid, test).expect("interned ids are valid")
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        &self.splits[split.index()]
    }

    pub fn train(&self) -> &[Triple] {
        self.split(Split::Train)
    }

    /// All triples of all splits, train first.
    pub fn triples(&self) -> impl Iterator<Item = &Triple> + '_ {
        self.splits.iter().flatten()
    }

    pub fn num_triples(&self) -> usize {
        self.splits.iter().map(Vec::len).sum()
    }

    pub fn adjacency(&self, v: EntityId) -> &[Adjacent] {
        &self.adjacency[v as usize]
    }

    /// Distinct neighbors of `v` in either direction, ascending, excluding `v`.
    pub fn neighbors(&self, v: EntityId) -> &[EntityId] {
        &self.neighbors[v as usize]
    }

    /// Number of distinct entities adjacent to `v` in any split; parallel
    /// relations collapse and self-loops contribute nothing.
    pub fn degree(&self, v: EntityId) -> Result<usize> {
        self.neighbors
            .get(v as usize)
            .map(Vec::len)
            .ok_or_else(|| Error::domain(format!("entity id {v} out of range (|V| = {})", self.num_entities())))
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn contains_entity(&self, v: EntityId) -> bool {
        (v as usize) < self.num_entities()
    }

    /// Writes `train.txt`, `valid.txt` and `test.txt` under `dir`.
    pub fn write_tsv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for split in Split::ALL {
            let path = dir.join(format!("{}.txt", split.name()));
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut out = BufWriter::new(file);
            for t in self.split(split) {
                writeln!(
                    out,
                    "{}\t{}\t{}",
                    self.entities.labels[t.head as usize],
                    self.relations.labels[t.relation as usize],
                    self.entities.labels[t.tail as usize]
                )
                .map_err(|e| Error::io(&path, e))?;
            }
            out.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Restricts every split to triples with both endpoints in `nodes`.
    pub fn induce(&self, nodes: &[EntityId]) -> Result<SubgraphSample> {
        if nodes.is_empty() {
            return Err(Error::domain("cannot induce a subgraph on an empty node set"));
        }
        let mut member = vec![false; self.num_entities()];
        for &v in nodes {
            if !self.contains_entity(v) {
                return Err(Error::domain(format!("entity id {v} out of range")));
            }
            member[v as usize] = true;
        }
        let mut node_list: Vec<EntityId> = nodes.to_vec();
        node_list.sort_unstable();
        node_list.dedup();

        let splits: [Vec<Triple>; 3] = std::array::from_fn(|i| {
            self.splits[i]
                .iter()
                .filter(|t| member[t.head as usize] && member[t.tail as usize])
                .copied()
                .collect()
        });
        let connected = is_connected(&node_list, splits.iter().flatten());
        let ratio = node_list.len() as f64 / self.num_entities() as f64;
        Ok(SubgraphSample {
            nodes: node_list,
            splits,
            meta: SampleMeta {
                requested_ratio: ratio,
                achieved_ratio: ratio,
                start_node: None,
                seed: None,
                connected,
                exhausted: false,
            },
        })
    }
}

/// Undirected flood fill over `edges` restricted to `nodes` (sorted).
pub(crate) fn is_connected<'a>(nodes: &[EntityId], edges: impl Iterator<Item = &'a Triple>) -> bool {
    if nodes.len() <= 1 {
        return true;
    }
    let local: HashMap<EntityId, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut adj = vec![Vec::new(); nodes.len()];
    for t in edges {
        if let (Some(&a), Some(&b)) = (local.get(&t.head), local.get(&t.tail)) {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut seen = vec![false; nodes.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if !seen[w] {
                seen[w] = true;
                reached += 1;
                queue.push_back(w);
            }
        }
    }
    reached == nodes.len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub requested_ratio: f64,
    pub achieved_ratio: f64,
    pub start_node: Option<EntityId>,
    pub seed: Option<u64>,
    pub connected: bool,
    /// BFS ran out of reachable nodes before hitting the target size.
    pub exhausted: bool,
}

/// A node subset of a parent graph together with the parent's triples that
/// fall entirely inside it. Ids refer to the parent graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphSample {
    pub nodes: Vec<EntityId>,
    pub splits: [Vec<Triple>; 3],
    pub meta: SampleMeta,
}

impl SubgraphSample {
    pub fn split(&self, split: Split) -> &[Triple] {
        &self.splits[split.index()]
    }

    pub fn triples_per_split(&self) -> BTreeMap<Split, usize> {
        Split::ALL.iter().map(|&s| (s, self.split(s).len())).collect()
    }

    /// A sample is usable for training/evaluation when no split is empty.
    pub fn is_usable(&self) -> bool {
        self.splits.iter().all(|s| !s.is_empty())
    }

    pub fn unusable_reason(&self) -> Option<String> {
        let empty: Vec<&str> = Split::ALL
            .iter()
            .filter(|s| self.split(**s).is_empty())
            .map(|s| s.name())
            .collect();
        (!empty.is_empty()).then(|| format!("empty induced split(s): {}", empty.join(", ")))
    }

    /// Materializes the sample as a standalone graph with compact ids.
    /// Entities keep parent-id order; only relations that occur in the
    /// induced triples are kept, also in parent-id order.
    pub fn to_graph(&self, parent: &KnowledgeGraph) -> KnowledgeGraph {
        let ent_map: HashMap<EntityId, u32> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, i as u32))
            .collect();
        let mut rels: Vec<RelationId> = self.splits.iter().flatten().map(|t| t.relation).collect();
        rels.sort_unstable();
        rels.dedup();
        let rel_map: HashMap<RelationId, u32> =
            rels.iter().enumerate().map(|(i, &r)| (r, i as u32)).collect();

        let entities = Vocab::from_labels(
            self.nodes
                .iter()
                .map(|&v| parent.entities.labels[v as usize].clone()),
        )
        .expect("parent labels are unique");
        let relations = Vocab::from_labels(
            rels.iter()
                .map(|&r| parent.relations.labels[r as usize].clone()),
        )
        .expect("parent labels are unique");
        let remap = |ts: &[Triple]| -> Vec<Triple> {
            ts.iter()
                .map(|t| Triple::new(ent_map[&t.head], rel_map[&t.relation], ent_map[&t.tail]))
                .collect()
        };
        KnowledgeGraph::new(
            entities,
            relations,
            remap(&self.splits[0]),
            remap(&self.splits[1]),
            remap(&self.splits[2]),
        )
        .expect("induced ids are valid")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnseenCounts {
    pub entities: usize,
    pub relations: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub entities: usize,
    pub relations: usize,
    pub triples_per_split: BTreeMap<Split, usize>,
    /// Entities/relations that occur in valid or test but never in train.
    pub unseen_in_train: UnseenCounts,
    pub duplicates_dropped: usize,
}

fn read_split(
    path: &Path,
    entities: &mut Vocab,
    relations: &mut Vocab,
) -> Result<Vec<Triple>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut triples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!(
                    "expected 3 tab-separated fields, found {}: {line:?}",
                    fields.len()
                ),
            });
        }
        let h = entities.intern(fields[0]);
        let r = relations.intern(fields[1]);
        let t = entities.intern(fields[2]);
        triples.push(Triple::new(h, r, t));
    }
    Ok(triples)
}

/// Loads a graph from three TSV files (`head\trelation\ttail` per line).
pub fn load_graph(train: &Path, valid: &Path, test: &Path) -> Result<(KnowledgeGraph, LoadReport)> {
    let mut entities = Vocab::new();
    let mut relations = Vocab::new();
    let tr = read_split(train, &mut entities, &mut relations)?;
    let (train_entities, train_relations) = (entities.len(), relations.len());
    let va = read_split(valid, &mut entities, &mut relations)?;
    let te = read_split(test, &mut entities, &mut relations)?;

    // first-appearance interning puts every train-seen label below these marks
    let unseen = UnseenCounts {
        entities: entities.len() - train_entities,
        relations: relations.len() - train_relations,
    };
    let (graph, dropped) = KnowledgeGraph::build(entities, relations, [tr, va, te])?;
    if unseen.entities + unseen.relations > 0 {
        log::warn!(
            "{} entities and {} relations appear only in valid/test",
            unseen.entities,
            unseen.relations
        );
    }
    let report = LoadReport {
        entities: graph.num_entities(),
        relations: graph.num_relations(),
        triples_per_split: Split::ALL.iter().map(|&s| (s, graph.split(s).len())).collect(),
        unseen_in_train: unseen,
        duplicates_dropped: dropped,
    };
    Ok((graph, report))
}

/// Loads `train.txt`, `valid.txt`, `test.txt` from one directory.
pub fn load_graph_dir(dir: &Path) -> Result<(KnowledgeGraph, LoadReport)> {
    load_graph(&dir.join("train.txt"), &dir.join("valid.txt"), &dir.join("test.txt"))
}

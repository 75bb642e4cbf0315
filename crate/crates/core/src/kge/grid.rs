//! One-axis-at-a-time sweeps over training length and embedding dimension.
//!
//! The epoch sweep runs at the base dimension and the dimension sweep at the
//! base epoch count. Each cell trains from its own seed stream, derived from
//! the base seed, the axis and the value, so cells are independent of each
//! other and of scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_by_category, train, EmbeddingModel, ModelKind, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{CategoryMap, RelationCategory};
use crate::graph::{KnowledgeGraph, Split};
use crate::seed::{derive_seed, label_key, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridAxis {
    Epochs,
    Dim,
}

impl GridAxis {
    pub fn name(self) -> &'static str {
        match self {
            GridAxis::Epochs => "epochs",
            GridAxis::Dim => "dim",
        }
    }
}

/// One long-format row: the per-category MRR of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub axis: GridAxis,
    pub value: usize,
    pub category: RelationCategory,
    pub mrr: f64,
    pub count: usize,
}

/// Seed of the cell `(axis, value)`.
pub fn cell_seed(base_seed: u64, axis: GridAxis, value: usize) -> u64 {
    derive_seed(base_seed, &[label_key(axis.name()), value as u64])
}

/// Trains one model per cell and evaluates it per category on the test split.
/// Rows come out in cell order (epoch cells first), categories ascending.
#[allow(clippy::too_many_arguments)]
pub fn hyperparam_grid(
    graph: &KnowledgeGraph,
    kind: ModelKind,
    epochs: &[usize],
    dims: &[usize],
    base: &TrainConfig,
    base_dim: usize,
    categories: &CategoryMap,
) -> Result<Vec<GridRow>> {
    if epochs.is_empty() || dims.is_empty() {
        return Err(Error::domain("grid axes must be nonempty"));
    }
    let cells: Vec<(GridAxis, usize)> = epochs
        .iter()
        .map(|&e| (GridAxis::Epochs, e))
        .chain(dims.iter().map(|&d| (GridAxis::Dim, d)))
        .collect();
    let per_cell: Vec<Result<Vec<GridRow>>> = cells
        .par_iter()
        .map(|&(axis, value)| {
            let seed = cell_seed(base.seed, axis, value);
            let (ep, dim) = match axis {
                GridAxis::Epochs => (value, base_dim),
                GridAxis::Dim => (base.epochs, value),
            };
            let cfg = TrainConfig { epochs: ep, seed, ..base.clone() };
            let mut rng = rng_from_seed(derive_seed(seed, &[label_key("init")]));
            let model = EmbeddingModel::init(kind, dim, graph.num_entities(), graph.num_relations(), &mut rng)?;
            let model = train(model, graph, &cfg)?.model;
            let report = evaluate_by_category(&model, graph, Split::Test, categories)?;
            Ok(report
                .per_category
                .into_iter()
                .map(|(category, m)| GridRow {
                    axis,
                    value,
                    category,
                    mrr: m.mrr,
                    count: m.count,
                })
                .collect())
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_cell {
        rows.extend(r?);
    }
    Ok(rows)
}

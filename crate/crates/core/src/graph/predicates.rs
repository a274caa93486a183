use std::collections::BTreeMap;

use serde::Serialize;

use super::{infer_shapes, Graph, Op};

/// Structural facts used as pass post-conditions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StructuralPredicates {
    pub max_rank: usize,
    pub broadcast_to_count: usize,
    pub fully_connected_count: usize,
    pub composite_count: usize,
    /// Multiset of op kinds.
    pub op_counts: BTreeMap<String, usize>,
}

pub fn structural_predicates(g: &Graph) -> StructuralPredicates {
    let inferred = infer_shapes(g);
    let g = inferred.as_ref().unwrap_or(g);
    let max_rank = g
        .tensors
        .values()
        .map(|d| d.shape.len())
        .chain(g.initializers.values().map(|t| t.rank()))
        .max()
        .unwrap_or(0);
    let mut op_counts = BTreeMap::new();
    for n in &g.nodes {
        *op_counts.entry(n.op.name().to_string()).or_insert(0) += 1;
    }
    let count = |f: fn(&Op) -> bool| g.nodes.iter().filter(|n| f(&n.op)).count();
    StructuralPredicates {
        max_rank,
        broadcast_to_count: count(|op| matches!(op, Op::BroadcastTo { .. })),
        fully_connected_count: count(|op| matches!(op, Op::FullyConnected)),
        composite_count: count(Op::is_composite),
        op_counts,
    }
}

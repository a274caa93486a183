//! Graph rewrite passes.
//!
//! Every pass is a pure function from a graph to a new graph plus a
//! [`PassReport`]. Rewritten subgraphs keep the original node's output
//! tensor ids, so graph signatures never change.

mod fc_to_conv;
mod gelu;
mod groupnorm;
mod pipeline;
mod serialize;

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::graph::{infer_shapes, validate, Graph, Node};

pub use fc_to_conv::fc_to_conv;
pub use gelu::{lower_gelu, GeluParams, GeluVariant, GELU_C1, GELU_C2};
pub use groupnorm::{lower_groupnorm, GroupNormVariant};
pub use pipeline::{converter_baseline, run_pipeline, serialize_oversized};
pub use serialize::{
    choose_serialization, conv_serialize_input, conv_serialize_output, minimal_serialization_factor,
    serialize_conv, SerialDim,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassReport {
    pub pass: String,
    pub nodes_removed: Vec<String>,
    pub nodes_added: Vec<String>,
    /// Pass-specific facts, e.g. the chosen serialization factor.
    pub metadata: BTreeMap<String, Value>,
    pub noop: bool,
}

impl PassReport {
    pub(crate) fn new(pass: &str) -> Self {
        PassReport {
            pass: pass.to_string(),
            nodes_removed: Vec::new(),
            nodes_added: Vec::new(),
            metadata: BTreeMap::new(),
            noop: true,
        }
    }

    pub(crate) fn meta(&mut self, key: &str, value: impl Into<Value>) {
        self.metadata.insert(key.to_string(), value.into());
    }

    pub(crate) fn replaced(&mut self, old: &str, new: &[Node]) {
        self.noop = false;
        self.nodes_removed.push(old.to_string());
        self.nodes_added.extend(new.iter().map(|n| n.id.clone()));
    }
}

/// Replaces each node for which `rewrite` returns `Some` with the returned
/// nodes, then tidies declarations and initializers and re-infers shapes.
/// `rewrite` may add initializers to the graph it is given.
pub(crate) fn rewrite_nodes(
    g: &Graph,
    report: &mut PassReport,
    mut rewrite: impl FnMut(&mut Graph, &Node) -> Result<Option<Vec<Node>>>,
) -> Result<Graph> {
    let mut out = infer_shapes(g)?;
    let original = std::mem::take(&mut out.nodes);
    let mut nodes = Vec::with_capacity(original.len());
    for node in &original {
        match rewrite(&mut out, node)? {
            Some(new) => {
                report.replaced(&node.id, &new);
                nodes.extend(new);
            }
            None => nodes.push(node.clone()),
        }
    }
    out.nodes = nodes;
    finish(out)
}

/// Drops stale declarations and unused initializers, then re-infers and
/// re-validates.
pub(crate) fn finish(mut g: Graph) -> Result<Graph> {
    g.prune_initializers();
    g.prune_declarations();
    // Intermediate declarations are recomputed from scratch.
    let keep: Vec<String> = g.inputs.clone();
    g.tensors.retain(|k, _| keep.contains(k) || g.outputs.contains(k));
    let g = infer_shapes(&g)?;
    let diags = validate(&g);
    if let Some(d) = diags.first() {
        return Err(Error::InvalidGraph(format!("rewrite produced an invalid graph: {d}")));
    }
    Ok(g)
}

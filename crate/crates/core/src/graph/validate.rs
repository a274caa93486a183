use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use super::shape::infer_node_shapes;
use super::Graph;
use crate::tensor::DType as TensorDType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    DuplicateId,
    MissingTensor,
    Cycle,
    NotTopological,
    MultipleProducers,
    ShapeMismatch,
    ShapeError,
    DType,
    OrphanInitializer,
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    /// Node the problem was found at, when there is one.
    pub node: Option<String>,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Some(n) => write!(f, "[{:?}] node `{n}`: {}", self.kind, self.message),
            None => write!(f, "[{:?}] {}", self.kind, self.message),
        }
    }
}

fn diag(node: Option<&str>, kind: DiagnosticKind, message: String) -> Diagnostic {
    Diagnostic {
        node: node.map(str::to_string),
        kind,
        message,
    }
}

/// Checks every structural invariant of a graph. Returns one diagnostic per
/// violation; an empty list means the graph is valid.
pub fn validate(g: &Graph) -> Vec<Diagnostic> {
    use DiagnosticKind::*;
    let mut out = Vec::new();

    let mut node_ids = HashSet::new();
    for n in &g.nodes {
        if !node_ids.insert(n.id.as_str()) {
            out.push(diag(Some(&n.id), DuplicateId, "node id used twice".into()));
        }
    }

    for id in g.tensors.keys() {
        if g.initializers.contains_key(id) {
            out.push(diag(None, Ambiguous, format!("`{id}` is both a declared activation and an initializer")));
        }
    }
    for (id, t) in &g.initializers {
        if let Some(bad) = t.values().and_then(|v| v.iter().find(|x| x.is_nan())) {
            out.push(diag(None, DType, format!("initializer `{id}` contains {bad}")));
        }
    }

    let mut producer: HashMap<&str, usize> = HashMap::new();
    for (i, n) in g.nodes.iter().enumerate() {
        for o in &n.outputs {
            if g.initializers.contains_key(o) || g.inputs.contains(o) {
                out.push(diag(Some(&n.id), MultipleProducers, format!("`{o}` is a graph input or initializer")));
            }
            if producer.insert(o.as_str(), i).is_some() {
                out.push(diag(Some(&n.id), MultipleProducers, format!("`{o}` produced more than once")));
            }
        }
    }

    let mut seen_inputs = HashSet::new();
    for id in &g.inputs {
        if !seen_inputs.insert(id) {
            out.push(diag(None, DuplicateId, format!("graph input `{id}` listed twice")));
        }
        match g.tensors.get(id) {
            None => out.push(diag(None, MissingTensor, format!("graph input `{id}` has no declaration"))),
            Some(d) if d.dtype == TensorDType::I8 => {
                out.push(diag(None, DType, format!("graph input `{id}` cannot be i8")))
            }
            _ => {}
        }
    }
    for id in &g.outputs {
        if !producer.contains_key(id.as_str()) && !g.inputs.contains(id) && !g.initializers.contains_key(id) {
            out.push(diag(None, MissingTensor, format!("graph output `{id}` is never produced")));
        }
    }

    // Ordering: an input produced by a later node is either a cycle or an
    // ordering error.
    let cyclic = cyclic_nodes(g, &producer);
    for (i, n) in g.nodes.iter().enumerate() {
        for inp in &n.inputs {
            let known = g.inputs.contains(inp) || g.initializers.contains_key(inp);
            match producer.get(inp.as_str()) {
                Some(&p) if p >= i => {
                    if cyclic.contains(&i) {
                        out.push(diag(Some(&n.id), Cycle, format!("consumes `{inp}` which depends on this node")));
                    } else {
                        out.push(diag(Some(&n.id), NotTopological, format!("consumes `{inp}` before it is produced")));
                    }
                }
                Some(_) => {}
                None if known => {}
                None => out.push(diag(Some(&n.id), MissingTensor, format!("input `{inp}` does not exist"))),
            }
        }
    }

    // Shape checks only make sense on an ordered, fully-referenced graph.
    if out.iter().all(|d| !matches!(d.kind, Cycle | NotTopological | MissingTensor | MultipleProducers)) {
        let mut shapes: HashMap<&str, Vec<usize>> = HashMap::new();
        for id in &g.inputs {
            if let Some(d) = g.tensors.get(id) {
                shapes.insert(id, d.shape.clone());
            }
        }
        for (id, t) in &g.initializers {
            shapes.insert(id, t.shape().to_vec());
        }
        for n in &g.nodes {
            let ins: Option<Vec<&[usize]>> = n.inputs.iter().map(|i| shapes.get(i.as_str()).map(Vec::as_slice)).collect();
            let Some(ins) = ins else { break };
            let res = infer_node_shapes(&n.op, &ins);
            match res {
                Err(reason) => {
                    out.push(diag(Some(&n.id), ShapeError, reason));
                    break;
                }
                Ok(inferred) if inferred.len() != n.outputs.len() => {
                    out.push(diag(
                        Some(&n.id),
                        ShapeError,
                        format!("{} outputs declared, {} produced", n.outputs.len(), inferred.len()),
                    ));
                    break;
                }
                Ok(inferred) => {
                    for (o, s) in n.outputs.iter().zip(inferred) {
                        if let Some(d) = g.tensors.get(o) {
                            if d.shape != s {
                                out.push(diag(
                                    Some(&n.id),
                                    ShapeMismatch,
                                    format!("`{o}` declared {:?} but inferred {s:?}", d.shape),
                                ));
                            }
                        }
                        shapes.insert(o, s);
                    }
                }
            }
        }
    }

    let used: HashSet<&str> = g
        .nodes
        .iter()
        .flat_map(|n| n.inputs.iter().map(String::as_str))
        .chain(g.outputs.iter().map(String::as_str))
        .collect();
    for id in g.initializers.keys() {
        if !used.contains(id.as_str()) {
            out.push(diag(None, OrphanInitializer, format!("initializer `{id}` is never used")));
        }
    }
    out
}

/// Indices of nodes that sit on a dependency cycle.
fn cyclic_nodes(g: &Graph, producer: &HashMap<&str, usize>) -> HashSet<usize> {
    let n = g.nodes.len();
    let mut indegree = vec![0usize; n];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, node) in g.nodes.iter().enumerate() {
        for inp in &node.inputs {
            if let Some(&p) = producer.get(inp.as_str()) {
                succ[p].push(i);
                indegree[i] += 1;
            }
        }
    }
    let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut done = vec![false; n];
    while let Some(i) = queue.pop() {
        done[i] = true;
        for &s in &succ[i] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                queue.push(s);
            }
        }
    }
    (0..n).filter(|&i| !done[i]).collect()
}

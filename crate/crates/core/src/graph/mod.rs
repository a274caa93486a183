//! The tensor-program IR.
//!
//! A [`Graph`] is an ordered node list over string-named tensors. Layout is
//! NHWC throughout. Weights, biases and constants live in `initializers`
//! and are referenced by position in a node's input list:
//!
//! | op               | inputs                     |
//! |------------------|----------------------------|
//! | `FullyConnected` | `x [.., Cin]`, `W [Cin, Cout]`, optional `b [Cout]` |
//! | `Conv2D`         | `x [B,H,W,Cin]`, `W [kh,kw,Cin,Cout]`, optional `b [Cout]` |
//! | `GroupNorm`      | `x [B,H,W,C]`, `gamma [C]`, `beta [C]` |
//!
//! Everything else takes activations only (constants are still allowed as
//! initializers, e.g. the scalars of a lowered GELU).

mod io;
mod predicates;
mod shape;
mod validate;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{element_count, DType, Tensor};

pub use io::{load_graph, parse_graph, save_graph, to_json_string};
pub use predicates::{structural_predicates, StructuralPredicates};
pub use shape::{broadcast_shapes, conv_output_dim, infer_node_shapes, infer_shapes};
pub use validate::{validate, Diagnostic, DiagnosticKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Padding {
    #[serde(rename = "SAME")]
    Same,
    #[serde(rename = "VALID")]
    Valid,
}

impl Padding {
    pub fn as_str(self) -> &'static str {
        match self {
            Padding::Same => "SAME",
            Padding::Valid => "VALID",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    FullyConnected,
    Conv2D { stride: [usize; 2], padding: Padding },
    Reshape { shape: Vec<usize> },
    Mean { axes: Vec<usize>, keep_dims: bool },
    SquaredDifference,
    Add,
    Sub,
    Mul,
    Rsqrt,
    Tanh,
    Minimum,
    Maximum,
    Concat { axis: usize },
    Split { axis: usize, parts: usize },
    BroadcastTo { shape: Vec<usize> },
    /// Composite marker, expanded by `lower_gelu`.
    Gelu,
    /// Composite marker, expanded by `lower_groupnorm`.
    GroupNorm { groups: usize, epsilon: f32 },
}

/// Every op name the IR knows, in declaration order.
pub const OP_NAMES: &[&str] = &[
    "FullyConnected",
    "Conv2D",
    "Reshape",
    "Mean",
    "SquaredDifference",
    "Add",
    "Sub",
    "Mul",
    "Rsqrt",
    "Tanh",
    "Minimum",
    "Maximum",
    "Concat",
    "Split",
    "BroadcastTo",
    "GELU",
    "GroupNorm",
];

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::FullyConnected => "FullyConnected",
            Op::Conv2D { .. } => "Conv2D",
            Op::Reshape { .. } => "Reshape",
            Op::Mean { .. } => "Mean",
            Op::SquaredDifference => "SquaredDifference",
            Op::Add => "Add",
            Op::Sub => "Sub",
            Op::Mul => "Mul",
            Op::Rsqrt => "Rsqrt",
            Op::Tanh => "Tanh",
            Op::Minimum => "Minimum",
            Op::Maximum => "Maximum",
            Op::Concat { .. } => "Concat",
            Op::Split { .. } => "Split",
            Op::BroadcastTo { .. } => "BroadcastTo",
            Op::Gelu => "GELU",
            Op::GroupNorm { .. } => "GroupNorm",
        }
    }

    pub fn is_composite(&self) -> bool {
        matches!(self, Op::Gelu | Op::GroupNorm { .. })
    }

    pub fn is_binary_elementwise(&self) -> bool {
        matches!(
            self,
            Op::Add | Op::Sub | Op::Mul | Op::Minimum | Op::Maximum | Op::SquaredDifference
        )
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub op: Op,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Optional trace label; lowered GELU nodes use it to mark the
    /// intermediates that are watched for overflow.
    pub label: Option<String>,
}

impl Node {
    pub fn new(
        id: impl Into<String>,
        op: Op,
        inputs: impl IntoIterator<Item = impl Into<String>>,
        outputs: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Node {
            id: id.into(),
            op,
            inputs: inputs.into_iter().map(Into::into).collect(),
            outputs: outputs.into_iter().map(Into::into).collect(),
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorDecl {
    pub shape: Vec<usize>,
    pub dtype: DType,
}

impl TensorDecl {
    pub fn f32(shape: Vec<usize>) -> Self {
        TensorDecl {
            shape,
            dtype: DType::F32,
        }
    }

    pub fn elements(&self) -> usize {
        element_count(&self.shape)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Graph {
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Activation declarations: graph inputs and node outputs.
    pub tensors: BTreeMap<String, TensorDecl>,
    pub initializers: BTreeMap<String, Tensor>,
    pub nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_input(&mut self, id: impl Into<String>, shape: Vec<usize>) -> &mut Self {
        let id = id.into();
        self.tensors.insert(id.clone(), TensorDecl::f32(shape));
        self.inputs.push(id);
        self
    }

    pub fn add_initializer(&mut self, id: impl Into<String>, t: Tensor) -> &mut Self {
        self.initializers.insert(id.into(), t);
        self
    }

    pub fn add_node(&mut self, node: Node) -> &mut Self {
        self.nodes.push(node);
        self
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn is_initializer(&self, id: &str) -> bool {
        self.initializers.contains_key(id)
    }

    /// Shape of an activation or initializer.
    pub fn shape_of(&self, id: &str) -> Option<&[usize]> {
        self.tensors
            .get(id)
            .map(|d| d.shape.as_slice())
            .or_else(|| self.initializers.get(id).map(|t| t.shape()))
    }

    /// Shape of an id, or a pass-style error.
    pub(crate) fn require_shape(&self, id: &str) -> Result<&[usize]> {
        self.shape_of(id)
            .ok_or_else(|| Error::InvalidGraph(format!("tensor `{id}` has no shape")))
    }

    pub fn producers(&self) -> HashMap<&str, usize> {
        let mut m = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for o in &n.outputs {
                m.insert(o.as_str(), i);
            }
        }
        m
    }

    /// Node indices consuming each tensor, in node order.
    pub fn consumers(&self) -> HashMap<&str, Vec<usize>> {
        let mut m: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for t in &n.inputs {
                let list = m.entry(t.as_str()).or_default();
                if list.last() != Some(&i) {
                    list.push(i);
                }
            }
        }
        m
    }

    /// Every id used anywhere in the graph (tensors, initializers, nodes).
    pub fn used_ids(&self) -> HashSet<String> {
        let mut s: HashSet<String> = self.tensors.keys().cloned().collect();
        s.extend(self.initializers.keys().cloned());
        for n in &self.nodes {
            s.insert(n.id.clone());
            s.extend(n.inputs.iter().cloned());
            s.extend(n.outputs.iter().cloned());
        }
        s
    }

    /// Drops initializers no node consumes. Returns the removed ids.
    pub fn prune_initializers(&mut self) -> Vec<String> {
        let used: HashSet<&str> = self
            .nodes
            .iter()
            .flat_map(|n| n.inputs.iter().map(String::as_str))
            .chain(self.outputs.iter().map(String::as_str))
            .collect();
        let dead: Vec<String> = self
            .initializers
            .keys()
            .filter(|k| !used.contains(k.as_str()))
            .cloned()
            .collect();
        for k in &dead {
            self.initializers.remove(k);
        }
        dead
    }

    /// Drops declarations of tensors that are neither graph inputs nor
    /// produced by a node.
    pub fn prune_declarations(&mut self) {
        let live: HashSet<String> = self
            .inputs
            .iter()
            .cloned()
            .chain(self.nodes.iter().flat_map(|n| n.outputs.iter().cloned()))
            .collect();
        self.tensors.retain(|k, _| live.contains(k));
    }

    /// Number of elements of a declared activation.
    pub fn elements(&self, id: &str) -> usize {
        self.shape_of(id).map(element_count).unwrap_or(0)
    }
}

/// Generates ids that do not collide with anything already in a graph.
pub(crate) struct IdGen {
    taken: HashSet<String>,
}

impl IdGen {
    pub fn for_graph(g: &Graph) -> Self {
        IdGen {
            taken: g.used_ids(),
        }
    }

    pub fn fresh(&mut self, base: &str) -> String {
        let mut candidate = base.to_string();
        let mut n = 1;
        while self.taken.contains(&candidate) {
            candidate = format!("{base}_{n}");
            n += 1;
        }
        self.taken.insert(candidate.clone());
        candidate
    }
}

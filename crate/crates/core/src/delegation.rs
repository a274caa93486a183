//! Delegate partitioning simulation.
//!
//! A [`CapabilityProfile`] decides per node whether the accelerator
//! delegate accepts it. Rejected nodes fall back to the CPU, and every
//! tensor crossing a device/CPU boundary is counted as a transfer. The
//! [`CostModel`] turns a partitioned graph into abstract time units:
//! a fixed overhead per kernel call, a per-MAC cost, a per-activation
//! element I/O cost and a per-transferred element cost.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{infer_shapes, Graph, Node, Op, OP_NAMES};

const MOBILE_GPU_JSON: &str = include_str!("../profiles/mobile-gpu.json");

fn default_max_rank() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapabilityProfile {
    pub name: String,
    pub supported_ops: BTreeSet<String>,
    #[serde(default = "default_max_rank")]
    pub max_rank: usize,
    /// Strict upper bound on a node's activation I/O elements; `None` is unlimited.
    #[serde(default)]
    pub max_io_elements: Option<u64>,
    #[serde(default)]
    pub broadcast_to_supported: bool,
    /// Ops the I/O budget applies to. Absent means every op.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub io_budget_ops: Option<BTreeSet<String>>,
}

impl CapabilityProfile {
    /// The shipped mobile GPU delegate model: rank ≤ 4, no BroadcastTo and a
    /// 2^21-element activation budget on Conv2D/FullyConnected.
    pub fn mobile_gpu() -> Self {
        Self::from_json(MOBILE_GPU_JSON).expect("bundled profile is valid")
    }

    /// Admits every known op at any size.
    pub fn unlimited() -> Self {
        CapabilityProfile {
            name: "unlimited".into(),
            supported_ops: OP_NAMES.iter().map(|s| s.to_string()).collect(),
            max_rank: 5,
            max_io_elements: None,
            broadcast_to_supported: true,
            io_budget_ops: None,
        }
    }

    pub fn with_budget(mut self, budget: Option<u64>) -> Self {
        self.max_io_elements = budget;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let p: CapabilityProfile = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::schema(e.path().to_string(), e.into_inner().to_string()))?;
        p.check()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<()> {
        if self.max_rank == 0 {
            return Err(Error::schema("max_rank", "must be at least 1"));
        }
        let known = |s: &String| OP_NAMES.contains(&s.as_str());
        if let Some(bad) = self.supported_ops.iter().find(|s| !known(s)) {
            return Err(Error::schema("supported_ops", format!("unknown op `{bad}`")));
        }
        if let Some(bad) = self.io_budget_ops.iter().flatten().find(|s| !known(s)) {
            return Err(Error::schema("io_budget_ops", format!("unknown op `{bad}`")));
        }
        Ok(())
    }

    fn budget_applies(&self, op: &Op) -> bool {
        self.io_budget_ops.as_ref().map_or(true, |s| s.contains(op.name()))
    }

    /// Whether a node with the given op and activation I/O element count
    /// passes the budget.
    pub fn within_budget(&self, op: &Op, io_elements: usize) -> bool {
        match self.max_io_elements {
            Some(b) if self.budget_applies(op) => (io_elements as u64) < b,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    UnsupportedOp { op: String },
    RankLimit { rank: usize, max_rank: usize },
    IoBudget { io_elements: usize, budget: u64 },
}

impl RejectReason {
    pub fn short(&self) -> &'static str {
        match self {
            RejectReason::UnsupportedOp { .. } => "unsupported op",
            RejectReason::RankLimit { .. } => "rank limit",
            RejectReason::IoBudget { .. } => "io budget",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::UnsupportedOp { op } => write!(f, "unsupported op {op}"),
            RejectReason::RankLimit { rank, max_rank } => write!(f, "rank limit: {rank} > {max_rank}"),
            RejectReason::IoBudget { io_elements, budget } => {
                write!(f, "io budget: {io_elements} elements, limit < {budget}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Admission {
    pub admitted: bool,
    /// Every violated condition, in check order; empty when admitted.
    pub reasons: Vec<RejectReason>,
}

impl Admission {
    pub fn reason(&self) -> Option<&RejectReason> {
        self.reasons.first()
    }
}

/// Activation elements a node reads and writes; initializers are excluded.
pub fn io_elements(g: &Graph, node: &Node) -> usize {
    node.inputs
        .iter()
        .filter(|i| !g.is_initializer(i))
        .chain(&node.outputs)
        .map(|id| g.elements(id))
        .sum()
}

/// Decides whether the delegate accepts `node`. `g` must carry inferred shapes.
pub fn admit(g: &Graph, node: &Node, profile: &CapabilityProfile) -> Admission {
    let rank = node
        .inputs
        .iter()
        .chain(&node.outputs)
        .filter_map(|id| g.shape_of(id))
        .map(<[usize]>::len)
        .max()
        .unwrap_or(0);
    admit_op(profile, &node.op, rank, io_elements(g, node))
}

/// Admission from the facts the predicate looks at: op kind, the highest
/// rank among the node's tensors and its activation I/O element count.
pub fn admit_op(profile: &CapabilityProfile, op: &Op, rank: usize, io: usize) -> Admission {
    let mut reasons = Vec::new();
    let op_ok = match op {
        Op::BroadcastTo { .. } => profile.broadcast_to_supported && profile.supported_ops.contains("BroadcastTo"),
        op => profile.supported_ops.contains(op.name()),
    };
    if !op_ok {
        reasons.push(RejectReason::UnsupportedOp {
            op: op.name().to_string(),
        });
    }
    if rank > profile.max_rank {
        reasons.push(RejectReason::RankLimit {
            rank,
            max_rank: profile.max_rank,
        });
    }
    if !profile.within_budget(op, io) {
        reasons.push(RejectReason::IoBudget {
            io_elements: io,
            budget: profile.max_io_elements.unwrap_or(u64::MAX),
        });
    }
    Admission {
        admitted: reasons.is_empty(),
        reasons,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Device,
    Cpu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeAssignment {
    pub node: String,
    pub op: String,
    pub placement: Placement,
    pub reasons: Vec<RejectReason>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub placement: Placement,
    pub nodes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionReport {
    pub profile: String,
    pub assignments: Vec<NodeAssignment>,
    pub segments: Vec<Segment>,
    pub transitions: usize,
    pub transferred_elements: usize,
    pub complete: bool,
}

impl PartitionReport {
    pub fn cpu_nodes(&self) -> impl Iterator<Item = &NodeAssignment> {
        self.assignments.iter().filter(|a| a.placement == Placement::Cpu)
    }

    /// Distinct short rejection reasons present in the report.
    pub fn reason_kinds(&self) -> BTreeSet<&'static str> {
        self.assignments
            .iter()
            .flat_map(|a| a.reasons.iter().map(RejectReason::short))
            .collect()
    }
}

/// Assigns every node to the device or the CPU and counts boundary
/// crossings. A tensor produced on one side counts once for each other
/// side that consumes it; graph inputs and outputs are not transfers.
pub fn partition(g: &Graph, profile: &CapabilityProfile) -> Result<PartitionReport> {
    let g = infer_shapes(g)?;
    let assignments: Vec<NodeAssignment> = g
        .nodes
        .iter()
        .map(|n| {
            let a = admit(&g, n, profile);
            NodeAssignment {
                node: n.id.clone(),
                op: n.op.name().to_string(),
                placement: if a.admitted { Placement::Device } else { Placement::Cpu },
                reasons: a.reasons,
            }
        })
        .collect();

    let mut segments: Vec<Segment> = Vec::new();
    for a in &assignments {
        match segments.last_mut() {
            Some(s) if s.placement == a.placement => s.nodes.push(a.node.clone()),
            _ => segments.push(Segment {
                placement: a.placement,
                nodes: vec![a.node.clone()],
            }),
        }
    }

    let placement_of: HashMap<&str, Placement> = g
        .nodes
        .iter()
        .zip(&assignments)
        .flat_map(|(n, a)| n.outputs.iter().map(move |o| (o.as_str(), a.placement)))
        .collect();
    let mut transitions = 0;
    let mut transferred = 0;
    let mut crossed: BTreeSet<(&str, bool)> = BTreeSet::new();
    for (n, a) in g.nodes.iter().zip(&assignments) {
        for inp in &n.inputs {
            if let Some(&p) = placement_of.get(inp.as_str()) {
                if p != a.placement && crossed.insert((inp.as_str(), a.placement == Placement::Device)) {
                    transitions += 1;
                    transferred += g.elements(inp);
                }
            }
        }
    }
    let complete = assignments.iter().all(|a| a.placement == Placement::Device);
    Ok(PartitionReport {
        profile: profile.name.clone(),
        assignments,
        segments,
        transitions,
        transferred_elements: transferred,
        complete,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Per kernel call.
    pub alpha: f64,
    /// Per multiply-accumulate.
    pub beta: f64,
    /// Per activation element read or written.
    pub gamma: f64,
    /// Per element moved between CPU and device.
    pub delta: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            alpha: 1e5,
            beta: 1.0,
            gamma: 0.1,
            delta: 10.0,
        }
    }
}

impl CostModel {
    pub const ZERO: CostModel = CostModel {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        delta: 0.0,
    };
}

/// Multiply-accumulate count of one node. Conv2D: `out * kh * kw * Cin`;
/// FullyConnected: `out * Cin`; reductions and GroupNorm: input elements;
/// Reshape, Split and Concat: 0 (pure data movement, charged through the
/// I/O term); everything else: output elements.
pub fn node_macs(g: &Graph, node: &Node) -> usize {
    let out: usize = node.outputs.iter().map(|o| g.elements(o)).sum();
    let first_in = node.inputs.first().map(|i| g.elements(i)).unwrap_or(0);
    match &node.op {
        Op::Conv2D { .. } => {
            let k = g.shape_of(&node.inputs[1]).unwrap_or(&[1, 1, 1, 1]);
            out * k[0] * k[1] * k[2]
        }
        Op::FullyConnected => {
            let w = g.shape_of(&node.inputs[1]).unwrap_or(&[1, 1]);
            out * w[0]
        }
        Op::Mean { .. } | Op::GroupNorm { .. } => first_in,
        Op::Reshape { .. } | Op::Split { .. } | Op::Concat { .. } => 0,
        _ => out,
    }
}

/// Abstract latency of a partitioned graph.
pub fn estimate_cost(g: &Graph, report: &PartitionReport, cost: &CostModel) -> Result<f64> {
    let g = infer_shapes(g)?;
    let per_node: f64 = g
        .nodes
        .iter()
        .map(|n| {
            cost.alpha + cost.beta * node_macs(&g, n) as f64 + cost.gamma * io_elements(&g, n) as f64
        })
        .sum();
    Ok(per_node + cost.delta * report.transferred_elements as f64)
}

use serde::{Deserialize, Serialize};

use super::{rewrite_nodes, PassReport};
use crate::error::{Error, Result};
use crate::graph::{Graph, IdGen, Node, Op};
use crate::tensor::Tensor;

const PASS: &str = "lower_groupnorm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupNormVariant {
    /// Rank-5 statistics with explicit BroadcastTo, as a stock converter
    /// emits it.
    Naive,
    /// Rank-4 statistics relying on implicit trailing broadcast only.
    BroadcastFree,
}

impl GroupNormVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupNormVariant::Naive => "naive",
            GroupNormVariant::BroadcastFree => "broadcast_free",
        }
    }
}

/// Expands every GroupNorm composite into primitives.
pub fn lower_groupnorm(g: &Graph, variant: GroupNormVariant) -> Result<(Graph, PassReport)> {
    let mut report = PassReport::new(PASS);
    report.meta("variant", variant.as_str());
    let mut ids = IdGen::for_graph(g);
    let out = rewrite_nodes(g, &mut report, |graph, node| {
        let Op::GroupNorm { groups, epsilon } = node.op else {
            return Ok(None);
        };
        lower_one(graph, &mut ids, node, groups, epsilon, variant).map(Some)
    })?;
    report.meta("lowered", report.nodes_removed.len());
    Ok((out, report))
}

fn lower_one(
    graph: &mut Graph,
    ids: &mut IdGen,
    node: &Node,
    groups: usize,
    epsilon: f32,
    variant: GroupNormVariant,
) -> Result<Vec<Node>> {
    let nid = node.id.as_str();
    let shape = graph.require_shape(&node.inputs[0])?.to_vec();
    let [b, h, w, c] = shape[..] else {
        return Err(Error::pass(PASS, nid, format!("input rank {} is not 4", shape.len())));
    };
    if groups == 0 || c % groups != 0 {
        return Err(Error::pass(PASS, nid, format!("{c} channels do not split into {groups} groups")));
    }
    let cg = c / groups;
    let mut nodes = Vec::new();
    let mut t = |base: &str| ids.fresh(&format!("{nid}/{base}"));

    let eps = t("epsilon");
    graph
        .initializers
        .insert(eps.clone(), Tensor::from_f32(vec![1], vec![epsilon])?);

    let (grouped, axes) = match variant {
        GroupNormVariant::Naive => (vec![b, h, w, groups, cg], vec![1, 2, 4]),
        GroupNormVariant::BroadcastFree => (vec![b, h * w, groups, cg], vec![1, 3]),
    };
    let xg = t("grouped");
    nodes.push(Node::new(t("reshape_in"), Op::Reshape { shape: grouped.clone() }, [node.inputs[0].clone()], [xg.clone()]));
    let mean = t("mean");
    let mean_op = Op::Mean { axes, keep_dims: true };
    nodes.push(Node::new(t("mean_op"), mean_op.clone(), [xg.clone()], [mean.clone()]));
    let mean_b = match variant {
        GroupNormVariant::Naive => {
            let id = t("mean_b");
            nodes.push(Node::new(t("broadcast_mean"), Op::BroadcastTo { shape: grouped.clone() }, [mean], [id.clone()]));
            id
        }
        GroupNormVariant::BroadcastFree => mean,
    };
    let sq = t("sq");
    nodes.push(Node::new(t("sqdiff"), Op::SquaredDifference, [xg.clone(), mean_b.clone()], [sq.clone()]));
    let var = t("var");
    nodes.push(Node::new(t("var_op"), mean_op, [sq], [var.clone()]));
    let var_eps = t("var_eps");
    nodes.push(Node::new(t("add_eps"), Op::Add, [var, eps], [var_eps.clone()]));
    let rstd = t("rstd");
    nodes.push(Node::new(t("rsqrt"), Op::Rsqrt, [var_eps], [rstd.clone()]));
    let rstd_b = match variant {
        GroupNormVariant::Naive => {
            let id = t("rstd_b");
            nodes.push(Node::new(t("broadcast_rstd"), Op::BroadcastTo { shape: grouped }, [rstd], [id.clone()]));
            id
        }
        GroupNormVariant::BroadcastFree => rstd,
    };
    let centered = t("centered");
    nodes.push(Node::new(t("sub"), Op::Sub, [xg, mean_b], [centered.clone()]));
    let normed = t("normed");
    nodes.push(Node::new(t("mul"), Op::Mul, [centered, rstd_b], [normed.clone()]));
    let n4 = t("normed4");
    nodes.push(Node::new(t("reshape_out"), Op::Reshape { shape: shape.clone() }, [normed], [n4.clone()]));

    let mut affine = |name: &str, src: &str, nodes: &mut Vec<Node>| -> Result<String> {
        let id = t(name);
        match graph.initializers.get(src) {
            Some(v) => {
                let r = v.reshaped(vec![1, 1, 1, c])?;
                graph.initializers.insert(id.clone(), r);
            }
            None => nodes.push(Node::new(
                t(&format!("{name}_reshape")),
                Op::Reshape { shape: vec![1, 1, 1, c] },
                [src.to_string()],
                [id.clone()],
            )),
        }
        Ok(id)
    };
    let gamma = affine("gamma", &node.inputs[1], &mut nodes)?;
    let beta = affine("beta", &node.inputs[2], &mut nodes)?;
    let scaled = t("scaled");
    nodes.push(Node::new(t("scale"), Op::Mul, [n4, gamma], [scaled.clone()]));
    nodes.push(Node::new(t("shift"), Op::Add, [scaled, beta], node.outputs.clone()));
    Ok(nodes)
}

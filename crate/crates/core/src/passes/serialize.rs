use serde::{Deserialize, Serialize};

use super::{finish, PassReport};
use crate::delegation::{admit_op, estimate_cost, partition, CapabilityProfile, CostModel};
use crate::error::{Error, Result};
use crate::graph::{infer_shapes, Graph, IdGen, Node, Op};
use crate::tensor::element_count;

const INPUT_PASS: &str = "conv_serialize_input";
const OUTPUT_PASS: &str = "conv_serialize_output";

/// Channel axis a convolution is split along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SerialDim {
    Input,
    Output,
}

impl SerialDim {
    pub fn as_str(self) -> &'static str {
        match self {
            SerialDim::Input => "input",
            SerialDim::Output => "output",
        }
    }

    fn pass(self) -> &'static str {
        match self {
            SerialDim::Input => INPUT_PASS,
            SerialDim::Output => OUTPUT_PASS,
        }
    }
}

struct ConvSite {
    index: usize,
    node: Node,
    x_shape: Vec<usize>,
    y_shape: Vec<usize>,
    kernel_shape: Vec<usize>,
}

fn locate(g: &Graph, node_id: &str, pass: &'static str) -> Result<ConvSite> {
    let index = g
        .node_index(node_id)
        .ok_or_else(|| Error::pass(pass, node_id, "no such node"))?;
    let node = g.nodes[index].clone();
    if !matches!(node.op, Op::Conv2D { .. }) {
        return Err(Error::pass(pass, node_id, format!("node is {}, not Conv2D", node.op)));
    }
    let shape = |id: &str| g.require_shape(id).map(<[usize]>::to_vec);
    Ok(ConvSite {
        x_shape: shape(&node.inputs[0])?,
        y_shape: shape(&node.outputs[0])?,
        kernel_shape: shape(&node.inputs[1])?,
        index,
        node,
    })
}

fn check_factor(pass: &'static str, node: &str, channels: usize, k: usize) -> Result<()> {
    if k == 0 || channels % k != 0 {
        return Err(Error::pass(
            pass,
            node,
            format!("factor {k} does not divide {channels} channels"),
        ));
    }
    Ok(())
}

fn splice(mut g: Graph, index: usize, nodes: Vec<Node>, report: &mut PassReport) -> Result<Graph> {
    let old = g.nodes[index].id.clone();
    report.replaced(&old, &nodes);
    g.nodes.splice(index..=index, nodes);
    finish(g)
}

/// Splits a Conv2D along its input channels into `k` bias-free convolutions
/// whose partial results are summed by a balanced Add tree; the bias, if
/// any, is added once at the end. `k = 1` returns the graph unchanged.
pub fn conv_serialize_input(g: &Graph, node_id: &str, k: usize) -> Result<(Graph, PassReport)> {
    let g = infer_shapes(g)?;
    let site = locate(&g, node_id, INPUT_PASS)?;
    let cin = site.kernel_shape[2];
    check_factor(INPUT_PASS, node_id, cin, k)?;
    let mut report = PassReport::new(INPUT_PASS);
    report.meta("node", node_id);
    report.meta("dim", "input");
    report.meta("k", k);
    if k == 1 {
        return Ok((g, report));
    }

    let mut g = g;
    let mut ids = IdGen::for_graph(&g);
    let node = &site.node;
    let kernel = g
        .initializers
        .get(&node.inputs[1])
        .ok_or_else(|| Error::pass(INPUT_PASS, node_id, "kernel is not an initializer"))?
        .clone();
    let part = cin / k;
    let parts: Vec<String> = (0..k).map(|i| ids.fresh(&format!("{node_id}/x{i}"))).collect();
    let mut nodes = vec![Node::new(
        ids.fresh(&format!("{node_id}/split")),
        Op::Split { axis: 3, parts: k },
        [node.inputs[0].clone()],
        parts.clone(),
    )];
    let mut level = Vec::with_capacity(k);
    for (i, x) in parts.iter().enumerate() {
        let w = ids.fresh(&format!("{}/in{i}", node.inputs[1]));
        g.initializers.insert(w.clone(), kernel.slice_axis(2, i * part, (i + 1) * part)?);
        let y = ids.fresh(&format!("{node_id}/partial{i}"));
        nodes.push(Node::new(
            ids.fresh(&format!("{node_id}/conv{i}")),
            node.op.clone(),
            [x.clone(), w],
            [y.clone()],
        ));
        level.push(y);
    }

    let bias = node.inputs.get(2).cloned();
    let out = node.outputs[0].clone();
    let mut depth = 0;
    while level.len() > 1 {
        let last_level = level.len() == 2;
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for (j, pair) in level.chunks(2).enumerate() {
            match pair {
                [a, b] => {
                    let sum = if last_level && bias.is_none() {
                        out.clone()
                    } else {
                        ids.fresh(&format!("{node_id}/sum{depth}_{j}"))
                    };
                    nodes.push(Node::new(
                        ids.fresh(&format!("{node_id}/add{depth}_{j}")),
                        Op::Add,
                        [a.clone(), b.clone()],
                        [sum.clone()],
                    ));
                    next.push(sum);
                }
                [a] => next.push(a.clone()),
                _ => unreachable!(),
            }
        }
        level = next;
        depth += 1;
    }
    if let Some(b) = bias {
        nodes.push(Node::new(
            ids.fresh(&format!("{node_id}/bias")),
            Op::Add,
            [level[0].clone(), b],
            [out],
        ));
    }
    let g = splice(g, site.index, nodes, &mut report)?;
    Ok((g, report))
}

/// Splits a Conv2D along its output channels into `k` convolutions joined by
/// a channel Concat. Each output element is accumulated exactly as before.
pub fn conv_serialize_output(g: &Graph, node_id: &str, k: usize) -> Result<(Graph, PassReport)> {
    let g = infer_shapes(g)?;
    let site = locate(&g, node_id, OUTPUT_PASS)?;
    let cout = site.kernel_shape[3];
    check_factor(OUTPUT_PASS, node_id, cout, k)?;
    let mut report = PassReport::new(OUTPUT_PASS);
    report.meta("node", node_id);
    report.meta("dim", "output");
    report.meta("k", k);
    if k == 1 {
        return Ok((g, report));
    }

    let mut g = g;
    let mut ids = IdGen::for_graph(&g);
    let node = &site.node;
    let fetch = |g: &Graph, id: &str, what: &str| {
        g.initializers
            .get(id)
            .cloned()
            .ok_or_else(|| Error::pass(OUTPUT_PASS, node_id, format!("{what} is not an initializer")))
    };
    let kernel = fetch(&g, &node.inputs[1], "kernel")?;
    let bias = match node.inputs.get(2) {
        Some(b) => Some((b.clone(), fetch(&g, b, "bias")?)),
        None => None,
    };
    let part = cout / k;
    let mut nodes = Vec::with_capacity(k + 1);
    let mut pieces = Vec::with_capacity(k);
    for i in 0..k {
        let (lo, hi) = (i * part, (i + 1) * part);
        let w = ids.fresh(&format!("{}/out{i}", node.inputs[1]));
        g.initializers.insert(w.clone(), kernel.slice_axis(3, lo, hi)?);
        let mut inputs = vec![node.inputs[0].clone(), w];
        if let Some((b_id, b)) = &bias {
            let id = ids.fresh(&format!("{b_id}/out{i}"));
            g.initializers.insert(id.clone(), b.slice_axis(0, lo, hi)?);
            inputs.push(id);
        }
        let y = ids.fresh(&format!("{node_id}/piece{i}"));
        nodes.push(Node::new(
            ids.fresh(&format!("{node_id}/conv{i}")),
            node.op.clone(),
            inputs,
            [y.clone()],
        ));
        pieces.push(y);
    }
    nodes.push(Node::new(
        ids.fresh(&format!("{node_id}/concat")),
        Op::Concat { axis: 3 },
        pieces,
        node.outputs.clone(),
    ));
    let g = splice(g, site.index, nodes, &mut report)?;
    Ok((g, report))
}

pub fn serialize_conv(g: &Graph, node_id: &str, dim: SerialDim, k: usize) -> Result<(Graph, PassReport)> {
    match dim {
        SerialDim::Input => conv_serialize_input(g, node_id, k),
        SerialDim::Output => conv_serialize_output(g, node_id, k),
    }
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n % d == 0).collect()
}

/// Smallest divisor `k` of the split channel count such that every
/// convolution produced by serializing `node_id` with factor `k` is admitted
/// by `profile`. `None` when no divisor works.
pub fn minimal_serialization_factor(
    g: &Graph,
    node_id: &str,
    dim: SerialDim,
    profile: &CapabilityProfile,
) -> Result<Option<usize>> {
    let g = infer_shapes(g)?;
    let site = locate(&g, node_id, dim.pass())?;
    let rank = site
        .x_shape
        .len()
        .max(site.y_shape.len())
        .max(site.kernel_shape.len());
    let (x, y) = (element_count(&site.x_shape), element_count(&site.y_shape));
    let channels = match dim {
        SerialDim::Input => site.kernel_shape[2],
        SerialDim::Output => site.kernel_shape[3],
    };
    Ok(divisors(channels).into_iter().find(|&k| {
        let io = match dim {
            SerialDim::Input => x / k + y,
            SerialDim::Output => x + y / k,
        };
        admit_op(profile, &site.node.op, rank, io).admitted
    }))
}

/// Picks the cheaper of the minimal input and output serializations under
/// `cost`, preferring the input dimension on a tie.
pub fn choose_serialization(
    g: &Graph,
    node_id: &str,
    profile: &CapabilityProfile,
    cost: &CostModel,
) -> Result<(SerialDim, usize)> {
    let g = infer_shapes(g)?;
    let site = locate(&g, node_id, INPUT_PASS)?;
    let single = isolate(&g, &site.node)?;
    let mut best: Option<(f64, SerialDim, usize)> = None;
    for dim in [SerialDim::Input, SerialDim::Output] {
        let Some(k) = minimal_serialization_factor(&g, node_id, dim, profile)? else {
            continue;
        };
        let (h, _) = serialize_conv(&single, node_id, dim, k)?;
        let c = estimate_cost(&h, &partition(&h, profile)?, cost)?;
        if best.map_or(true, |(b, _, _)| c < b) {
            best = Some((c, dim, k));
        }
    }
    best.map(|(_, dim, k)| (dim, k)).ok_or_else(|| {
        Error::pass(
            "choose_serialization",
            node_id,
            "no serialization factor is admitted along either dimension",
        )
    })
}

/// A graph holding only `node`, its activation input as a graph input and
/// its initializers.
fn isolate(g: &Graph, node: &Node) -> Result<Graph> {
    let mut single = Graph::new();
    let x = &node.inputs[0];
    single.add_input(x.clone(), g.require_shape(x)?.to_vec());
    for id in &node.inputs[1..] {
        if let Some(t) = g.initializers.get(id) {
            single.add_initializer(id.clone(), t.clone());
        }
    }
    single.add_node(node.clone());
    single.outputs = node.outputs.clone();
    infer_shapes(&single)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{structural_predicates, Padding};
    use crate::tensor::Tensor;

    fn conv_graph(x: Vec<usize>, cout: usize, bias: bool) -> Graph {
        let cin = x[3];
        let mut g = Graph::new();
        g.add_input("x", x);
        let n = 9 * cin * cout;
        let w: Vec<f32> = (0..n).map(|i| ((i * 37 % 101) as f32 - 50.0) / 100.0).collect();
        g.add_initializer("w", Tensor::from_f32(vec![3, 3, cin, cout], w).unwrap());
        let mut inputs = vec!["x", "w"];
        if bias {
            g.add_initializer("b", Tensor::from_f32(vec![cout], (0..cout).map(|i| i as f32).collect()).unwrap());
            inputs.push("b");
        }
        g.add_node(Node::new(
            "conv",
            Op::Conv2D { stride: [1, 1], padding: Padding::Same },
            inputs,
            ["y"],
        ));
        g.outputs.push("y".into());
        g
    }

    #[test]
    fn input_split_structure() {
        let (h, r) = conv_serialize_input(&conv_graph(vec![1, 4, 4, 8], 2, true), "conv", 4).unwrap();
        let p = structural_predicates(&h);
        assert_eq!(p.op_counts["Conv2D"], 4);
        assert_eq!(p.op_counts["Split"], 1);
        // three tree adds plus the bias add
        assert_eq!(p.op_counts["Add"], 4);
        assert_eq!(r.nodes_removed, vec!["conv"]);
        assert_eq!(h.shape_of("y"), Some(&[1, 4, 4, 2][..]));
    }

    #[test]
    fn odd_factor_tree_carries() {
        let (h, _) = conv_serialize_input(&conv_graph(vec![1, 3, 3, 3], 2, false), "conv", 3).unwrap();
        let p = structural_predicates(&h);
        assert_eq!(p.op_counts["Add"], 2);
        assert_eq!(h.nodes.last().unwrap().outputs, vec!["y"]);
    }

    #[test]
    fn output_split_structure() {
        let (h, _) = conv_serialize_output(&conv_graph(vec![1, 4, 4, 2], 8, true), "conv", 4).unwrap();
        let p = structural_predicates(&h);
        assert_eq!(p.op_counts["Conv2D"], 4);
        assert_eq!(p.op_counts["Concat"], 1);
        assert!(!h.initializers.contains_key("w"));
    }

    #[test]
    fn factor_one_is_noop() {
        let g = conv_graph(vec![1, 4, 4, 2], 2, false);
        for dim in [SerialDim::Input, SerialDim::Output] {
            let (h, r) = serialize_conv(&g, "conv", dim, 1).unwrap();
            assert!(r.noop);
            assert_eq!(h.nodes, g.nodes);
        }
    }

    #[test]
    fn bad_factor_and_node() {
        let g = conv_graph(vec![1, 4, 4, 6], 2, false);
        assert!(conv_serialize_input(&g, "conv", 4).is_err());
        assert!(conv_serialize_output(&g, "conv", 3).is_err());
        assert!(conv_serialize_input(&g, "conv", 0).is_err());
        assert!(conv_serialize_input(&g, "nope", 2).is_err());
    }

    #[test]
    fn unlimited_budget_needs_no_split() {
        let g = conv_graph(vec![1, 4, 4, 6], 4, false);
        let p = CapabilityProfile::unlimited();
        for dim in [SerialDim::Input, SerialDim::Output] {
            assert_eq!(minimal_serialization_factor(&g, "conv", dim, &p).unwrap(), Some(1));
        }
    }

    #[test]
    fn budget_below_output_is_infeasible_for_input() {
        let g = conv_graph(vec![1, 4, 4, 6], 4, false);
        let p = CapabilityProfile::unlimited().with_budget(Some(64));
        assert_eq!(minimal_serialization_factor(&g, "conv", SerialDim::Input, &p).unwrap(), None);
        // 96 + 64/k < 64 never holds either
        assert_eq!(minimal_serialization_factor(&g, "conv", SerialDim::Output, &p).unwrap(), None);
        assert!(choose_serialization(&g, "conv", &p, &CostModel::default()).is_err());
    }

    #[test]
    fn symmetric_tie_goes_to_input() {
        let g = conv_graph(vec![1, 4, 4, 4], 4, false);
        // 64 + 64 fails; 32 + 64 = 96 passes either way
        let p = CapabilityProfile::unlimited().with_budget(Some(100));
        let c = choose_serialization(&g, "conv", &p, &CostModel::ZERO).unwrap();
        assert_eq!(c, (SerialDim::Input, 2));
    }
}

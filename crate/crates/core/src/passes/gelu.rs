use serde::{Deserialize, Serialize};

use super::{rewrite_nodes, PassReport};
use crate::error::{Error, Result};
use crate::graph::{Graph, IdGen, Node, Op};
use crate::tensor::Tensor;

const PASS: &str = "lower_gelu";

/// sqrt(2/pi).
pub const GELU_C1: f64 = 0.797_884_560_802_865_4;
pub const GELU_C2: f64 = 0.044715;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeluParams {
    /// Clip bound applied to the tanh-argument path of the stable lowering.
    pub m: f64,
}

impl Default for GeluParams {
    fn default() -> Self {
        GeluParams { m: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeluVariant {
    Naive,
    Stable,
}

impl GeluVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            GeluVariant::Naive => "naive",
            GeluVariant::Stable => "stable",
        }
    }
}

struct Constants {
    c1: String,
    c2: String,
    half: String,
    one: String,
    bounds: Option<(String, String)>,
}

/// Expands every GELU composite into the tanh approximation
/// `0.5 x (1 + tanh(c1 (x + c2 x^3)))`. The stable variant feeds the cubic
/// path with `max(min(x, M), -M)` instead of `x`.
pub fn lower_gelu(g: &Graph, variant: GeluVariant, params: GeluParams) -> Result<(Graph, PassReport)> {
    if !(params.m.is_finite() && params.m > 0.0) {
        return Err(Error::pass(PASS, "", format!("clip bound {} must be positive", params.m)));
    }
    let mut report = PassReport::new(PASS);
    report.meta("variant", variant.as_str());
    if variant == GeluVariant::Stable {
        report.meta("m", params.m);
    }
    let mut ids = IdGen::for_graph(g);
    let mut consts: Option<Constants> = None;
    let out = rewrite_nodes(g, &mut report, |graph, node| {
        if node.op != Op::Gelu {
            return Ok(None);
        }
        let k = consts.get_or_insert_with(|| {
            let mut add = |name: &str, v: f64| {
                let id = ids.fresh(&format!("gelu/{name}"));
                graph.initializers.insert(id.clone(), Tensor::scalar(v as f32));
                id
            };
            let bounds = (variant == GeluVariant::Stable).then(|| (add("m", params.m), add("neg_m", -params.m)));
            Constants {
                c1: add("c1", GELU_C1),
                c2: add("c2", GELU_C2),
                half: add("half", 0.5),
                one: add("one", 1.0),
                bounds,
            }
        });
        Ok(Some(lower_one(&mut ids, node, k)))
    })?;
    report.meta("lowered", report.nodes_removed.len());
    Ok((out, report))
}

struct Emitter<'a> {
    ids: &'a mut IdGen,
    prefix: &'a str,
    nodes: Vec<Node>,
}

impl Emitter<'_> {
    fn node(&mut self, name: &str, op: Op, inputs: [&str; 2], label: Option<&str>, out: Option<&[String]>) -> String {
        let outputs = match out {
            Some(o) => o.to_vec(),
            None => vec![self.ids.fresh(&format!("{}/{name}", self.prefix))],
        };
        let inputs = inputs.iter().filter(|s| !s.is_empty()).map(|s| s.to_string());
        let mut n = Node::new(self.ids.fresh(&format!("{}/{name}_op", self.prefix)), op, inputs, outputs.clone());
        n.label = label.map(str::to_string);
        self.nodes.push(n);
        outputs[0].clone()
    }

    fn step(&mut self, name: &str, op: Op, inputs: [&str; 2], label: Option<&str>) -> String {
        self.node(name, op, inputs, label, None)
    }
}

fn lower_one(ids: &mut IdGen, node: &Node, k: &Constants) -> Vec<Node> {
    let mut e = Emitter {
        ids,
        prefix: &node.id,
        nodes: Vec::new(),
    };
    let x = node.inputs[0].as_str();
    let arg = match &k.bounds {
        Some((m, neg_m)) => {
            let hi = e.step("clip_hi", Op::Minimum, [x, m], None);
            e.step("clip", Op::Maximum, [&hi, neg_m], None)
        }
        None => x.to_string(),
    };
    let sq = e.step("square", Op::Mul, [&arg, &arg], Some("gelu_square"));
    let cube = e.step("cube", Op::Mul, [&sq, &arg], Some("gelu_cube"));
    let cubic = e.step("cubic", Op::Mul, [&cube, &k.c2], Some("gelu_cubic_term"));
    let poly = e.step("poly", Op::Add, [&arg, &cubic], Some("gelu_poly"));
    let targ = e.step("tanh_arg", Op::Mul, [&poly, &k.c1], Some("gelu_tanh_arg"));
    let th = e.step("tanh", Op::Tanh, [&targ, ""], None);
    let gate = e.step("gate", Op::Add, [&th, &k.one], None);
    let half_x = e.step("half_x", Op::Mul, [x, &k.half], None);
    e.node("product", Op::Mul, [&half_x, &gate], None, Some(&node.outputs));
    e.nodes
}

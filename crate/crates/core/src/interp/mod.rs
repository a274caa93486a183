//! Reference interpreter.
//!
//! Executes a graph in binary32 or in emulated binary16. In F16 mode every
//! node input, weight and output is rounded to binary16. The accumulating
//! kernels (Conv2D, FullyConnected, Mean) sum in binary32, like fp16 GPU
//! kernels with wide accumulators; a product of two binary16 values is exact
//! in binary32, so only the sums and the final store round. Every node output is checked for non-finite
//! values; nodes carrying a trace label (the lowered GELU intermediates)
//! report under that label.

mod compare;
mod kernels;

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::f16::{round_f64_to_f16, round_to_f16};
use crate::graph::{infer_shapes, Graph, Node, Op};
use crate::tensor::{DType, Tensor};

pub use compare::{
    compare_graphs, random_binding_set, random_bindings, EquivalenceReport, OutputError, Tolerance, REL_FLOOR,
};
pub(crate) use compare::check_signature;
pub use kernels::gelu_exact;

use kernels::{ConvGeometry, Round};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    F32,
    F16Emulated,
}

impl ExecMode {
    fn round(self) -> Round {
        match self {
            ExecMode::F32 => |x| x,
            ExecMode::F16Emulated => round_to_f16,
        }
    }

    fn round_f64(self, x: f64) -> f32 {
        match self {
            ExecMode::F32 => x as f32,
            ExecMode::F16Emulated => round_f64_to_f16(x),
        }
    }

    fn output_dtype(self) -> DType {
        match self {
            ExecMode::F32 => DType::F32,
            ExecMode::F16Emulated => DType::F16,
        }
    }
}

/// Input or output values keyed by tensor id.
pub type Bindings = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NonFiniteEvent {
    pub node: String,
    /// The node's trace label, or `output` for unlabelled nodes.
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct ExecTrace {
    pub outputs: Bindings,
    pub nonfinite_events: Vec<NonFiniteEvent>,
    /// Largest number of node-output elements alive at once.
    pub peak_intermediate_elements: usize,
}

/// Trace label used for the plain output of an unlabelled node.
pub const OUTPUT_LABEL: &str = "output";

struct Value {
    shape: Vec<usize>,
    data: Vec<f32>,
}

pub fn execute(g: &Graph, inputs: &Bindings, mode: ExecMode) -> Result<ExecTrace> {
    let g = infer_shapes(g)?;
    let r = mode.round();
    let mut env: HashMap<&str, Value> = HashMap::new();

    for id in &g.inputs {
        let decl = &g.tensors[id];
        let t = inputs
            .get(id)
            .ok_or_else(|| Error::Exec(format!("missing input `{id}`")))?;
        if t.dtype() != decl.dtype {
            return Err(Error::Exec(format!(
                "input `{id}` has dtype {} but {} is declared",
                t.dtype(),
                decl.dtype
            )));
        }
        if t.shape() != decl.shape.as_slice() {
            return Err(Error::Exec(format!(
                "input `{id}` has shape {:?} but {:?} is declared",
                t.shape(),
                decl.shape
            )));
        }
        let data = t.to_f32_vec().into_iter().map(r).collect();
        env.insert(id, Value { shape: decl.shape.clone(), data });
    }
    for (id, t) in &g.initializers {
        let data = match mode {
            ExecMode::F32 => t.to_f32_vec(),
            ExecMode::F16Emulated => t.cast(DType::F16)?.to_f32_vec(),
        };
        env.insert(id, Value { shape: t.shape().to_vec(), data });
    }

    // Liveness: last node index reading each intermediate.
    let mut last_use: HashMap<&str, usize> = HashMap::new();
    for (i, n) in g.nodes.iter().enumerate() {
        for t in &n.inputs {
            last_use.insert(t.as_str(), i);
        }
    }
    let produced: std::collections::HashSet<&str> =
        g.nodes.iter().flat_map(|n| n.outputs.iter().map(String::as_str)).collect();
    let mut live = 0usize;
    let mut peak = 0usize;
    let mut events = Vec::new();

    for (i, node) in g.nodes.iter().enumerate() {
        let results = run_node(node, &env, mode, r)?;
        for (id, v) in node.outputs.iter().zip(results) {
            if v.data.iter().any(|x| !x.is_finite()) {
                events.push(NonFiniteEvent {
                    node: node.id.clone(),
                    label: node.label.clone().unwrap_or_else(|| OUTPUT_LABEL.to_string()),
                });
            }
            live += v.data.len();
            env.insert(id, v);
        }
        peak = peak.max(live);
        for t in node.inputs.iter().chain(&node.outputs) {
            let dead = last_use.get(t.as_str()).map_or(true, |&u| u <= i)
                && !g.outputs.contains(t)
                && produced.contains(t.as_str());
            if dead {
                if let Some(v) = env.get(t.as_str()) {
                    if !v.data.is_empty() {
                        live -= v.data.len();
                        env.insert(t, Value { shape: v.shape.clone(), data: Vec::new() });
                    }
                }
            }
        }
    }

    let mut outputs = Bindings::new();
    for id in &g.outputs {
        let v = env
            .get(id.as_str())
            .ok_or_else(|| Error::Exec(format!("output `{id}` was never computed")))?;
        let t = match mode {
            ExecMode::F32 => Tensor::from_f32(v.shape.clone(), v.data.clone())?,
            ExecMode::F16Emulated => Tensor::from_f16_values(v.shape.clone(), v.data.clone())?,
        };
        debug_assert_eq!(t.dtype(), mode.output_dtype());
        outputs.insert(id.clone(), t);
    }
    Ok(ExecTrace {
        outputs,
        nonfinite_events: events,
        peak_intermediate_elements: peak,
    })
}

fn run_node(node: &Node, env: &HashMap<&str, Value>, mode: ExecMode, r: Round) -> Result<Vec<Value>> {
    let arg = |k: usize| -> Result<&Value> {
        let id = node
            .inputs
            .get(k)
            .ok_or_else(|| Error::Exec(format!("node `{}` is missing input {k}", node.id)))?;
        match env.get(id.as_str()) {
            Some(v) if v.data.is_empty() => Err(Error::Exec(format!("`{id}` read after release"))),
            Some(v) => Ok(v),
            None => Err(Error::Exec(format!("node `{}` reads unknown tensor `{id}`", node.id))),
        }
    };
    let single = |shape: Vec<usize>, data: Vec<f32>| Ok(vec![Value { shape, data }]);
    let x = arg(0)?;

    match &node.op {
        op if op.is_binary_elementwise() => {
            let y = arg(1)?;
            let f: fn(f32, f32) -> f32 = match op {
                Op::Add => |a, b| a + b,
                Op::Sub => |a, b| a - b,
                Op::Mul => |a, b| a * b,
                Op::Minimum => |a, b| if a.is_nan() || b.is_nan() { f32::NAN } else { a.min(b) },
                Op::Maximum => |a, b| if a.is_nan() || b.is_nan() { f32::NAN } else { a.max(b) },
                Op::SquaredDifference => |a, b| (a - b) * (a - b),
                _ => unreachable!(),
            };
            let (data, shape) = kernels::binary(&x.data, &x.shape, &y.data, &y.shape, r, f);
            single(shape, data)
        }
        Op::Rsqrt => single(
            x.shape.clone(),
            x.data.iter().map(|&v| mode.round_f64(1.0 / f64::from(v).sqrt())).collect(),
        ),
        Op::Tanh => single(x.shape.clone(), x.data.iter().map(|&v| r(libm::tanhf(v))).collect()),
        Op::Gelu => single(
            x.shape.clone(),
            x.data.iter().map(|&v| mode.round_f64(kernels::gelu_exact(f64::from(v)))).collect(),
        ),
        Op::Reshape { shape } => single(shape.clone(), x.data.clone()),
        Op::BroadcastTo { shape } => single(shape.clone(), kernels::broadcast_to(&x.data, &x.shape, shape)),
        Op::Mean { axes, keep_dims } => {
            let data = kernels::mean(&x.data, &x.shape, axes, r);
            let shape: Vec<usize> = if *keep_dims {
                x.shape.iter().enumerate().map(|(i, &d)| if axes.contains(&i) { 1 } else { d }).collect()
            } else {
                let s: Vec<usize> =
                    x.shape.iter().enumerate().filter(|(i, _)| !axes.contains(i)).map(|(_, &d)| d).collect();
                if s.is_empty() {
                    vec![1]
                } else {
                    s
                }
            };
            single(shape, data)
        }
        Op::Concat { axis } => {
            let parts: Vec<&Value> = (0..node.inputs.len()).map(arg).collect::<Result<_>>()?;
            let views: Vec<(&[f32], &[usize])> = parts.iter().map(|v| (v.data.as_slice(), v.shape.as_slice())).collect();
            let mut shape = x.shape.clone();
            shape[*axis] = parts.iter().map(|v| v.shape[*axis]).sum();
            single(shape, kernels::concat(&views, *axis))
        }
        Op::Split { axis, parts } => {
            let mut shape = x.shape.clone();
            shape[*axis] /= parts;
            Ok(kernels::split(&x.data, &x.shape, *axis, *parts)
                .into_iter()
                .map(|data| Value { shape: shape.clone(), data })
                .collect())
        }
        Op::FullyConnected => {
            let w = arg(1)?;
            let bias = if node.inputs.len() > 2 { Some(arg(2)?.data.as_slice()) } else { None };
            let (cin, cout) = (w.shape[0], w.shape[1]);
            let mut shape = x.shape.clone();
            *shape.last_mut().unwrap() = cout;
            single(shape, kernels::fully_connected(&x.data, cin, &w.data, cout, bias, r))
        }
        Op::Conv2D { stride, padding } => {
            let w = arg(1)?;
            let bias = if node.inputs.len() > 2 { Some(arg(2)?.data.as_slice()) } else { None };
            let input: [usize; 4] = x.shape.as_slice().try_into().map_err(|_| Error::Exec("conv input rank".into()))?;
            let kernel: [usize; 4] = w.shape.as_slice().try_into().map_err(|_| Error::Exec("conv kernel rank".into()))?;
            let oh = crate::graph::conv_output_dim(input[1], kernel[0], stride[0], *padding);
            let ow = crate::graph::conv_output_dim(input[2], kernel[1], stride[1], *padding);
            let (Some(oh), Some(ow)) = (oh, ow) else {
                return Err(Error::Exec(format!("conv `{}` geometry", node.id)));
            };
            let geo = ConvGeometry {
                input,
                kernel,
                output: [input[0], oh, ow, kernel[3]],
                stride: *stride,
                padding: *padding,
            };
            single(geo.output.to_vec(), kernels::conv2d(&x.data, &w.data, bias, &geo, r))
        }
        Op::GroupNorm { groups, epsilon } => {
            let gamma = arg(1)?;
            let beta = arg(2)?;
            let out = kernels::group_norm(&x.data, &x.shape, *groups, *epsilon, &gamma.data, &beta.data);
            single(x.shape.clone(), out.into_iter().map(|v| mode.round_f64(v)).collect())
        }
        _ => unreachable!("every op handled"),
    }
}

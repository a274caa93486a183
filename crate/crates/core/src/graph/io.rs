//! JSON graph files.
//!
//! ```json
//! {
//!   "version": 1,
//!   "inputs": ["x"], "outputs": ["y"],
//!   "tensors": {"x": {"shape": [1, 4], "dtype": "f32"}},
//!   "initializers": {"w": {"dtype": "i8", "shape": [4, 4], "data": "<base64>", "scales": [0.01]}},
//!   "nodes": [{"id": "fc", "op": "FullyConnected", "attrs": {}, "inputs": ["x", "w"], "outputs": ["y"]}]
//! }
//! ```
//!
//! Initializer payloads are base64 of little-endian packed values (4 bytes
//! per f32, 2 bytes of binary16 bits per f16, 1 byte per i8), so float data
//! round-trips bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{Graph, Node, Op, Padding, TensorDecl};
use crate::error::{Error, Result};
use crate::f16::F16;
use crate::tensor::{element_count, DType, Tensor, TensorData};

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    version: u32,
    inputs: Vec<String>,
    outputs: Vec<String>,
    tensors: BTreeMap<String, TensorDecl>,
    #[serde(default)]
    initializers: BTreeMap<String, InitializerDoc>,
    nodes: Vec<NodeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitializerDoc {
    dtype: DType,
    shape: Vec<usize>,
    data: String,
    /// Stored as f64 so the f32 scales survive the decimal round trip exactly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scales: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    op: String,
    #[serde(default)]
    attrs: Map<String, Value>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoAttrs {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvAttrs {
    #[serde(default = "unit_stride")]
    stride: [usize; 2],
    padding: Padding,
}

fn unit_stride() -> [usize; 2] {
    [1, 1]
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapeAttrs {
    shape: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MeanAttrs {
    axes: Vec<usize>,
    keep_dims: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AxisAttrs {
    axis: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitAttrs {
    axis: usize,
    parts: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupNormAttrs {
    groups: usize,
    epsilon: f32,
}

fn attrs<T: serde::de::DeserializeOwned>(path: &str, attrs: &Map<String, Value>) -> Result<T> {
    let v = Value::Object(attrs.clone());
    serde_path_to_error::deserialize(v).map_err(|e| {
        let inner = e.path().to_string();
        let full = if inner == "." { path.to_string() } else { format!("{path}.{inner}") };
        Error::schema(full, e.into_inner().to_string())
    })
}

fn op_from_doc(path: &str, name: &str, a: &Map<String, Value>) -> Result<Op> {
    let path = format!("{path}.attrs");
    let op = match name {
        "FullyConnected" => attrs::<NoAttrs>(&path, a).map(|_| Op::FullyConnected)?,
        "Conv2D" => {
            let c: ConvAttrs = attrs(&path, a)?;
            Op::Conv2D { stride: c.stride, padding: c.padding }
        }
        "Reshape" => Op::Reshape { shape: attrs::<ShapeAttrs>(&path, a)?.shape },
        "BroadcastTo" => Op::BroadcastTo { shape: attrs::<ShapeAttrs>(&path, a)?.shape },
        "Mean" => {
            let m: MeanAttrs = attrs(&path, a)?;
            Op::Mean { axes: m.axes, keep_dims: m.keep_dims }
        }
        "Concat" => Op::Concat { axis: attrs::<AxisAttrs>(&path, a)?.axis },
        "Split" => {
            let s: SplitAttrs = attrs(&path, a)?;
            Op::Split { axis: s.axis, parts: s.parts }
        }
        "GroupNorm" => {
            let g: GroupNormAttrs = attrs(&path, a)?;
            Op::GroupNorm { groups: g.groups, epsilon: g.epsilon }
        }
        simple => {
            let op = match simple {
                "SquaredDifference" => Op::SquaredDifference,
                "Add" => Op::Add,
                "Sub" => Op::Sub,
                "Mul" => Op::Mul,
                "Rsqrt" => Op::Rsqrt,
                "Tanh" => Op::Tanh,
                "Minimum" => Op::Minimum,
                "Maximum" => Op::Maximum,
                "GELU" => Op::Gelu,
                other => {
                    return Err(Error::schema(
                        path.trim_end_matches(".attrs").to_string() + ".op",
                        format!("unknown op `{other}`"),
                    ))
                }
            };
            attrs::<NoAttrs>(&path, a)?;
            op
        }
    };
    Ok(op)
}

fn op_attrs(op: &Op) -> Map<String, Value> {
    let v = match op {
        Op::Conv2D { stride, padding } => json!({"stride": stride, "padding": padding}),
        Op::Reshape { shape } | Op::BroadcastTo { shape } => json!({ "shape": shape }),
        Op::Mean { axes, keep_dims } => json!({"axes": axes, "keep_dims": keep_dims}),
        Op::Concat { axis } => json!({ "axis": axis }),
        Op::Split { axis, parts } => json!({"axis": axis, "parts": parts}),
        Op::GroupNorm { groups, epsilon } => json!({"groups": groups, "epsilon": f64::from(*epsilon)}),
        _ => json!({}),
    };
    match v {
        Value::Object(m) => m,
        _ => unreachable!(),
    }
}

fn encode_tensor(t: &Tensor) -> InitializerDoc {
    let (data, scales) = match t.data() {
        TensorData::Float(v) => {
            let bytes: Vec<u8> = match t.dtype() {
                DType::F16 => v
                    .iter()
                    .flat_map(|x| F16::from_f32(*x).to_bits().to_le_bytes())
                    .collect(),
                _ => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            };
            (bytes, None)
        }
        TensorData::Int8 { values, scales } => (
            values.iter().map(|q| *q as u8).collect(),
            Some(scales.iter().map(|s| f64::from(*s)).collect()),
        ),
    };
    InitializerDoc {
        dtype: t.dtype(),
        shape: t.shape().to_vec(),
        data: BASE64.encode(data),
        scales,
    }
}

fn decode_tensor(path: &str, d: &InitializerDoc) -> Result<Tensor> {
    let bytes = BASE64
        .decode(&d.data)
        .map_err(|e| Error::schema(format!("{path}.data"), format!("invalid base64: {e}")))?;
    let n = element_count(&d.shape);
    let width = match d.dtype {
        DType::F32 => 4,
        DType::F16 => 2,
        DType::I8 => 1,
    };
    if bytes.len() != n * width {
        return Err(Error::schema(
            format!("{path}.data"),
            format!("{} bytes for {n} {} values", bytes.len(), d.dtype),
        ));
    }
    if d.dtype != DType::I8 && d.scales.is_some() {
        return Err(Error::schema(format!("{path}.scales"), "scales are only valid for i8"));
    }
    let shape = d.shape.clone();
    let res = match d.dtype {
        DType::F32 => Tensor::from_f32(
            shape,
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
        ),
        DType::F16 => Tensor::from_f16_values(
            shape,
            bytes
                .chunks_exact(2)
                .map(|c| F16::from_bits(u16::from_le_bytes([c[0], c[1]])).to_f32())
                .collect(),
        ),
        DType::I8 => {
            let scales = d
                .scales
                .as_ref()
                .ok_or_else(|| Error::schema(format!("{path}.scales"), "i8 initializer needs scales"))?;
            Tensor::from_i8(
                shape,
                bytes.iter().map(|b| *b as i8).collect(),
                scales.iter().map(|s| *s as f32).collect(),
            )
        }
    };
    res.map_err(|e| Error::schema(path, e.to_string()))
}

/// Parses a graph document. Structure is checked here; graph invariants are
/// left to [`validate`](super::validate).
pub fn parse_graph(text: &str) -> Result<Graph> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: GraphDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::schema(path, e.into_inner().to_string())
    })?;
    if doc.version != FORMAT_VERSION {
        return Err(Error::schema("version", format!("expected {FORMAT_VERSION}, got {}", doc.version)));
    }
    let mut initializers = BTreeMap::new();
    for (id, d) in &doc.initializers {
        initializers.insert(id.clone(), decode_tensor(&format!("initializers.{id}"), d)?);
    }
    let nodes = doc
        .nodes
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            let op = op_from_doc(&format!("nodes[{i}]"), &n.op, &n.attrs)?;
            Ok(Node {
                id: n.id,
                op,
                inputs: n.inputs,
                outputs: n.outputs,
                label: n.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Graph {
        inputs: doc.inputs,
        outputs: doc.outputs,
        tensors: doc.tensors,
        initializers,
        nodes,
    })
}

pub fn to_json_string(g: &Graph) -> String {
    let doc = GraphDoc {
        version: FORMAT_VERSION,
        inputs: g.inputs.clone(),
        outputs: g.outputs.clone(),
        tensors: g.tensors.clone(),
        initializers: g.initializers.iter().map(|(k, t)| (k.clone(), encode_tensor(t))).collect(),
        nodes: g
            .nodes
            .iter()
            .map(|n| NodeDoc {
                id: n.id.clone(),
                op: n.op.name().to_string(),
                attrs: op_attrs(&n.op),
                inputs: n.inputs.clone(),
                outputs: n.outputs.clone(),
                label: n.label.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("graph documents always serialize")
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    parse_graph(&std::fs::read_to_string(path)?)
}

pub fn save_graph(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_json_string(g))?;
    Ok(())
}

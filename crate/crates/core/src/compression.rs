//! Post-training weight compression: symmetric int8 quantization,
//! structured output-channel pruning and the block reconstruction error.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{infer_shapes, Graph, Op};
use crate::interp::{check_signature, execute, random_binding_set, Bindings, ExecMode};
use crate::passes::finish;
use crate::tensor::{DType, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantConfig {
    #[serde(default = "default_true")]
    pub per_channel: bool,
    /// Largest quantized magnitude. 127 is int8; 7 mimics a 4-bit grid.
    #[serde(default = "default_qmax")]
    pub qmax: i8,
}

fn default_true() -> bool {
    true
}

fn default_qmax() -> i8 {
    127
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig {
            per_channel: true,
            qmax: 127,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantizedWeight {
    pub id: String,
    pub shape: Vec<usize>,
    pub scales: Vec<f32>,
    /// Largest `|dequantized - original|` over the tensor.
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantReport {
    pub per_channel: bool,
    pub qmax: i8,
    pub weights: Vec<QuantizedWeight>,
    pub bytes_before: usize,
    pub bytes_after: usize,
}

fn round_half_away(v: f64) -> f64 {
    // f64::round rounds halfway cases away from zero.
    v.round()
}

/// Symmetric quantization of one tensor along its last axis (or as a whole).
/// Returns the I8 tensor.
pub fn quantize_tensor(t: &Tensor, per_channel: bool, qmax: i8) -> Result<Tensor> {
    if qmax < 1 {
        return Err(Error::Compression(format!("qmax {qmax} must be at least 1")));
    }
    if t.dtype() == DType::I8 {
        return Err(Error::Compression("weight is already quantized".into()));
    }
    let v = t.values().expect("float tensor");
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Compression("weight contains non-finite values".into()));
    }
    let channels = if per_channel {
        t.shape().last().copied().unwrap_or(1).max(1)
    } else {
        1
    };
    let mut maxabs = vec![0.0f32; channels];
    for (i, &x) in v.iter().enumerate() {
        let c = i % channels;
        maxabs[c] = maxabs[c].max(x.abs());
    }
    let scales: Vec<f32> = maxabs
        .iter()
        .map(|&m| {
            if m == 0.0 {
                1.0
            } else {
                (f64::from(m) / f64::from(qmax)) as f32
            }
        })
        .collect();
    let q = f64::from(qmax);
    let values: Vec<i8> = v
        .iter()
        .enumerate()
        .map(|(i, &x)| round_half_away(f64::from(x) / f64::from(scales[i % channels])).clamp(-q, q) as i8)
        .collect();
    Tensor::from_i8(t.shape().to_vec(), values, scales)
}

/// Quantizes the weight (second input) of every Conv2D and FullyConnected
/// node. Biases stay float.
pub fn quantize_weights(g: &Graph, config: QuantConfig) -> Result<(Graph, QuantReport)> {
    let mut out = g.clone();
    let targets: BTreeSet<String> = g
        .nodes
        .iter()
        .filter(|n| matches!(n.op, Op::Conv2D { .. } | Op::FullyConnected))
        .filter_map(|n| n.inputs.get(1).cloned())
        .filter(|id| g.is_initializer(id))
        .collect();
    let mut report = QuantReport {
        per_channel: config.per_channel,
        qmax: config.qmax,
        weights: Vec::new(),
        bytes_before: 0,
        bytes_after: 0,
    };
    for id in targets {
        let t = &g.initializers[&id];
        let q = quantize_tensor(t, config.per_channel, config.qmax)?;
        let orig = t.values().expect("float tensor");
        let max_abs_error = orig
            .iter()
            .zip(q.to_f32_vec())
            .map(|(&a, b)| (f64::from(a) - f64::from(b)).abs())
            .fold(0.0, f64::max);
        let scales = q.scales().expect("quantized").to_vec();
        report.bytes_before += 4 * t.len();
        report.bytes_after += q.len() + 4 * scales.len();
        report.weights.push(QuantizedWeight {
            id: id.clone(),
            shape: t.shape().to_vec(),
            scales,
            max_abs_error,
        });
        out.initializers.insert(id, q);
    }
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSpec {
    pub target: String,
    /// Fraction of output channels to remove, in `[0, 1)`.
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneReport {
    pub target: String,
    pub norms: Vec<f64>,
    pub removed: Vec<usize>,
    pub kept: Vec<usize>,
    /// Consumer convolutions whose input channels were sliced.
    pub consumers: Vec<String>,
}

fn unsupported(reason: impl std::fmt::Display) -> Error {
    Error::Compression(format!("unsupported consumer pattern: {reason}"))
}

/// L2 norm of each output-channel filter of a `[kh, kw, Cin, Cout]` kernel.
pub fn filter_norms(kernel: &Tensor) -> Vec<f64> {
    let cout = kernel.shape().last().copied().unwrap_or(1);
    let mut sums = vec![0.0f64; cout];
    for (i, v) in kernel.to_f32_vec().into_iter().enumerate() {
        sums[i % cout] += f64::from(v) * f64::from(v);
    }
    sums.into_iter().map(f64::sqrt).collect()
}

/// Removes the `floor(r * Cout)` output channels of a Conv2D with the
/// smallest filter norms, lower index first on ties, and slices the input
/// channels of every consuming Conv2D to match.
pub fn prune_structured(g: &Graph, spec: &PruneSpec) -> Result<(Graph, PruneReport)> {
    let r = spec.sparsity;
    if !(0.0..1.0).contains(&r) {
        return Err(Error::Compression(format!("sparsity {r} is outside [0, 1)")));
    }
    let g = infer_shapes(g)?;
    let t = g
        .node_index(&spec.target)
        .ok_or_else(|| Error::Compression(format!("no node `{}`", spec.target)))?;
    let node = &g.nodes[t];
    if !matches!(node.op, Op::Conv2D { .. }) {
        return Err(Error::Compression(format!("`{}` is {}, not Conv2D", node.id, node.op)));
    }
    let out = &node.outputs[0];
    if g.outputs.contains(out) {
        return Err(unsupported(format!("`{out}` is a graph output")));
    }
    let consumers = g.consumers();
    let users: Vec<usize> = consumers.get(out.as_str()).cloned().unwrap_or_default();
    for &u in &users {
        let c = &g.nodes[u];
        let direct = matches!(c.op, Op::Conv2D { .. })
            && c.inputs[0] == *out
            && c.inputs[1..].iter().all(|i| i != out);
        if !direct {
            return Err(unsupported(format!("`{out}` feeds {} node `{}`", c.op, c.id)));
        }
    }
    // Every sliced weight must belong to exactly one node.
    let mut weights: Vec<&String> = node.inputs[1..].iter().collect();
    weights.extend(users.iter().map(|&u| &g.nodes[u].inputs[1]));
    for w in &weights {
        if !g.is_initializer(w) {
            return Err(unsupported(format!("`{w}` is not an initializer")));
        }
        if consumers.get(w.as_str()).map_or(0, Vec::len) > 1 {
            return Err(unsupported(format!("weight `{w}` is shared")));
        }
    }

    let kernel = &g.initializers[&node.inputs[1]];
    let norms = filter_norms(kernel);
    let cout = norms.len();
    let n_remove = (r * cout as f64).floor() as usize;
    let mut order: Vec<usize> = (0..cout).collect();
    order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)));
    let mut removed: Vec<usize> = order[..n_remove].to_vec();
    removed.sort_unstable();
    let kept: Vec<usize> = (0..cout).filter(|c| !removed.contains(c)).collect();
    let report = PruneReport {
        target: node.id.clone(),
        norms,
        removed,
        kept: kept.clone(),
        consumers: users.iter().map(|&u| g.nodes[u].id.clone()).collect(),
    };
    if n_remove == 0 {
        return Ok((g, report));
    }

    let mut h = g.clone();
    let w_id = &node.inputs[1];
    h.initializers.insert(w_id.clone(), kernel.select_axis(3, &kept)?);
    if let Some(b) = node.inputs.get(2) {
        let bias = g.initializers[b].select_axis(0, &kept)?;
        h.initializers.insert(b.clone(), bias);
    }
    for &u in &users {
        let w = &g.nodes[u].inputs[1];
        h.initializers.insert(w.clone(), g.initializers[w].select_axis(2, &kept)?);
    }
    Ok((finish(h)?, report))
}

/// `sum_i |B'(x_i) - B(x_i)|^2 / sum_i |B(x_i)|^2` over all outputs, both
/// graphs executed in F32.
pub fn block_reconstruction_error(original: &Graph, compressed: &Graph, calibration: &[Bindings]) -> Result<f64> {
    if calibration.is_empty() {
        return Err(Error::Compression("calibration set is empty".into()));
    }
    check_signature(original, compressed)?;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for b in calibration {
        let ra = execute(original, b, ExecMode::F32)?;
        let rb = execute(compressed, b, ExecMode::F32)?;
        for id in &original.outputs {
            let va = ra.outputs[id].to_f32_vec();
            let vb = rb.outputs[id].to_f32_vec();
            for (&a, &b) in va.iter().zip(&vb) {
                let d = f64::from(b) - f64::from(a);
                num += d * d;
                den += f64::from(a) * f64::from(a);
            }
        }
    }
    Ok(match (num, den) {
        (n, _) if n == 0.0 => 0.0,
        (_, d) if d == 0.0 => f64::INFINITY,
        (n, d) => n / d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lo")]
    pub lo: f32,
    #[serde(default = "default_hi")]
    pub hi: f32,
}

fn default_samples() -> usize {
    32
}

fn default_lo() -> f32 {
    -1.0
}

fn default_hi() -> f32 {
    1.0
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            samples: default_samples(),
            seed: 0,
            lo: default_lo(),
            hi: default_hi(),
        }
    }
}

/// Seeded uniform calibration inputs for `g`.
pub fn calibration_set(g: &Graph, config: &CalibrationConfig) -> Result<Vec<Bindings>> {
    random_binding_set(g, config.seed, config.samples, config.lo, config.hi)
}

/// A compression job as read from JSON: prunes first, then quantizes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressConfig {
    #[serde(default)]
    pub prune: Vec<PruneSpec>,
    #[serde(default)]
    pub quantize: Option<QuantConfig>,
    #[serde(default)]
    pub calibration: CalibrationConfig,
}

impl CompressConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::schema(e.path().to_string(), e.into_inner().to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressReport {
    pub prune: Vec<PruneReport>,
    pub quantize: Option<QuantReport>,
    pub calibration: CalibrationConfig,
    pub reconstruction_error: f64,
}

/// Runs a whole [`CompressConfig`] and measures the result.
pub fn compress(g: &Graph, config: &CompressConfig) -> Result<(Graph, CompressReport)> {
    let mut h = infer_shapes(g)?;
    let mut prune = Vec::new();
    for spec in &config.prune {
        let (next, r) = prune_structured(&h, spec)?;
        h = next;
        prune.push(r);
    }
    let quantize = match config.quantize {
        Some(q) => {
            let (next, r) = quantize_weights(&h, q)?;
            h = next;
            Some(r)
        }
        None => None,
    };
    let calib = calibration_set(g, &config.calibration)?;
    let reconstruction_error = block_reconstruction_error(g, &h, &calib)?;
    Ok((
        h,
        CompressReport {
            prune,
            quantize,
            calibration: config.calibration,
            reconstruction_error,
        },
    ))
}

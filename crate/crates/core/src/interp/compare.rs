//! Numerical equivalence of two graphs with the same signature.

use serde::{Deserialize, Serialize};

use super::{execute, Bindings, ExecMode};
use crate::error::{Error, Result};
use crate::graph::{infer_shapes, Graph};
use crate::rng::Lcg64;
use crate::tensor::{DType, Tensor};

/// Denominator floor for relative error.
pub const REL_FLOOR: f64 = 1e-6;

/// An element passes when it is within `max_abs` absolutely or within
/// `max_rel` relatively (denominator `max(|ref|, 1e-6)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub max_abs: f64,
    pub max_rel: f64,
}

impl Tolerance {
    pub const fn new(max_abs: f64, max_rel: f64) -> Self {
        Tolerance { max_abs, max_rel }
    }

    fn accepts(&self, abs: f64, rel: f64) -> bool {
        abs <= self.max_abs || rel <= self.max_rel
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputError {
    pub id: String,
    pub max_abs: f64,
    pub max_rel: f64,
    /// Elements outside tolerance, summed over all samples.
    pub violations: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub outputs: Vec<OutputError>,
    pub max_abs: f64,
    pub max_rel: f64,
    pub samples: usize,
    pub mode: ExecMode,
    pub tolerance: Tolerance,
    pub pass: bool,
}

pub(crate) fn check_signature(g1: &Graph, g2: &Graph) -> Result<()> {
    let a = infer_shapes(g1)?;
    let b = infer_shapes(g2)?;
    if a.inputs != b.inputs {
        return Err(Error::Signature(format!("inputs {:?} vs {:?}", a.inputs, b.inputs)));
    }
    if a.outputs != b.outputs {
        return Err(Error::Signature(format!("outputs {:?} vs {:?}", a.outputs, b.outputs)));
    }
    for id in a.inputs.iter().chain(&a.outputs) {
        let (da, db) = (a.shape_of(id), b.shape_of(id));
        if da != db {
            return Err(Error::Signature(format!("`{id}` has shape {da:?} vs {db:?}")));
        }
    }
    for id in &a.inputs {
        if a.tensors[id].dtype != b.tensors[id].dtype {
            return Err(Error::Signature(format!("input `{id}` dtype differs")));
        }
    }
    Ok(())
}

/// Runs both graphs on every binding set and reports the worst errors of `g2`
/// against the reference `g1`.
pub fn compare_graphs(
    g1: &Graph,
    g2: &Graph,
    inputs: &[Bindings],
    mode: ExecMode,
    tolerance: Tolerance,
) -> Result<EquivalenceReport> {
    check_signature(g1, g2)?;
    let mut outputs: Vec<OutputError> = g1
        .outputs
        .iter()
        .map(|id| OutputError {
            id: id.clone(),
            max_abs: 0.0,
            max_rel: 0.0,
            violations: 0,
            pass: true,
        })
        .collect();
    for b in inputs {
        let ra = execute(g1, b, mode)?;
        let rb = execute(g2, b, mode)?;
        for o in outputs.iter_mut() {
            let va = ra.outputs[&o.id].to_f32_vec();
            let vb = rb.outputs[&o.id].to_f32_vec();
            for (&x, &y) in va.iter().zip(&vb) {
                let (abs, rel) = element_error(x, y);
                o.max_abs = o.max_abs.max(abs);
                o.max_rel = o.max_rel.max(rel);
                if !tolerance.accepts(abs, rel) {
                    o.violations += 1;
                }
            }
        }
    }
    for o in outputs.iter_mut() {
        o.pass = o.violations == 0;
    }
    let max_abs = outputs.iter().map(|o| o.max_abs).fold(0.0, f64::max);
    let max_rel = outputs.iter().map(|o| o.max_rel).fold(0.0, f64::max);
    let pass = outputs.iter().all(|o| o.pass);
    Ok(EquivalenceReport {
        outputs,
        max_abs,
        max_rel,
        samples: inputs.len(),
        mode,
        tolerance,
        pass,
    })
}

/// Absolute and relative error of `got` against `reference`. Identical
/// non-finite values count as equal; any other non-finite pairing is an
/// infinite error.
fn element_error(reference: f32, got: f32) -> (f64, f64) {
    if reference.to_bits() == got.to_bits() || (reference.is_nan() && got.is_nan()) {
        return (0.0, 0.0);
    }
    if !reference.is_finite() || !got.is_finite() {
        return (f64::INFINITY, f64::INFINITY);
    }
    let abs = (f64::from(reference) - f64::from(got)).abs();
    (abs, abs / f64::from(reference).abs().max(REL_FLOOR))
}

/// One set of graph inputs drawn uniformly from `[lo, hi)`. F16 inputs are
/// rounded to binary16. Inputs are filled in graph-input order.
pub fn random_bindings(g: &Graph, rng: &mut Lcg64, lo: f32, hi: f32) -> Result<Bindings> {
    let mut b = Bindings::new();
    for id in &g.inputs {
        let decl = g
            .tensors
            .get(id)
            .ok_or_else(|| Error::InvalidGraph(format!("input `{id}` is not declared")))?;
        let data = rng.fill_uniform(decl.elements(), lo, hi);
        let t = Tensor::from_f32(decl.shape.clone(), data)?;
        let t = match decl.dtype {
            DType::F16 => t.cast(DType::F16)?,
            _ => t,
        };
        b.insert(id.clone(), t);
    }
    Ok(b)
}

/// `count` binding sets from one seeded generator.
pub fn random_binding_set(g: &Graph, seed: u64, count: usize, lo: f32, hi: f32) -> Result<Vec<Bindings>> {
    let mut rng = Lcg64::new(seed);
    (0..count).map(|_| random_bindings(g, &mut rng, lo, hi)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Node, Op};

    fn scale_graph(k: f32) -> Graph {
        let mut g = Graph::new();
        g.add_input("x", vec![3]);
        g.add_initializer("k", Tensor::scalar(k));
        g.add_node(Node::new("m", Op::Mul, ["x", "k"], ["y"]));
        g.outputs.push("y".into());
        g
    }

    #[test]
    fn identical_graphs_have_zero_error() {
        let g = scale_graph(2.0);
        let inputs = random_binding_set(&g, 1, 4, -1.0, 1.0).unwrap();
        let r = compare_graphs(&g, &g, &inputs, ExecMode::F32, Tolerance::new(0.0, 0.0)).unwrap();
        assert!(r.pass);
        assert_eq!(r.max_abs, 0.0);
    }

    #[test]
    fn perturbed_weight_fails() {
        let inputs = random_binding_set(&scale_graph(2.0), 1, 4, -1.0, 1.0).unwrap();
        let r = compare_graphs(
            &scale_graph(2.0),
            &scale_graph(3.0),
            &inputs,
            ExecMode::F32,
            Tolerance::new(1e-5, 1e-5),
        )
        .unwrap();
        assert!(!r.pass);
        assert!(r.max_abs > 0.0);
    }

    #[test]
    fn signature_mismatch_is_an_error() {
        let mut other = scale_graph(2.0);
        other.outputs[0] = "x".into();
        let inputs = random_binding_set(&other, 1, 1, -1.0, 1.0).unwrap();
        assert!(matches!(
            compare_graphs(&scale_graph(2.0), &other, &inputs, ExecMode::F32, Tolerance::new(1.0, 1.0)),
            Err(Error::Signature(_))
        ));
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(element_error(0.0, 1e-7), (1e-7f32 as f64, 1e-7f32 as f64 / 1e-6));
        assert_eq!(element_error(f32::INFINITY, f32::INFINITY), (0.0, 0.0));
        assert_eq!(element_error(1.0, f32::INFINITY).0, f64::INFINITY);
    }
}

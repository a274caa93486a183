use std::collections::HashSet;

use super::{Graph, Op, Padding, TensorDecl};
use crate::error::{Error, Result};
use crate::tensor::{element_count, DType, MAX_RANK};

/// Output extent of one convolution axis.
///
/// SAME: `ceil(in / stride)`; VALID: `floor((in - k) / stride) + 1`.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<usize> {
    if stride == 0 || kernel == 0 {
        return None;
    }
    match padding {
        Padding::Same => Some(input.div_ceil(stride)),
        Padding::Valid if input >= kernel => Some((input - kernel) / stride + 1),
        Padding::Valid => None,
    }
}

/// Trailing-dimension broadcasting: shorter shapes are left-padded with 1s and
/// each dimension pair must match or contain a 1.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn arity(op: &Op, n: usize) -> std::result::Result<(), String> {
    let ok = match op {
        Op::FullyConnected | Op::Conv2D { .. } => n == 2 || n == 3,
        Op::GroupNorm { .. } => n == 3,
        Op::Concat { .. } => n >= 1,
        op if op.is_binary_elementwise() => n == 2,
        _ => n == 1,
    };
    if ok {
        Ok(())
    } else {
        Err(format!("{op} does not take {n} inputs"))
    }
}

/// Output shapes of one node given its input shapes.
pub fn infer_node_shapes(op: &Op, inputs: &[&[usize]]) -> std::result::Result<Vec<Vec<usize>>, String> {
    arity(op, inputs.len())?;
    let x = inputs[0];
    let out = match op {
        Op::FullyConnected => {
            let w = inputs[1];
            if x.is_empty() || w.len() != 2 {
                return Err(format!("FullyConnected needs x[.., Cin] and W[Cin, Cout], got {x:?} and {w:?}"));
            }
            let cin = x[x.len() - 1];
            if w[0] != cin {
                return Err(format!("weight rows {} != input channels {cin}", w[0]));
            }
            check_bias(inputs, w[1])?;
            let mut o = x.to_vec();
            *o.last_mut().unwrap() = w[1];
            vec![o]
        }
        Op::Conv2D { stride, padding } => {
            let w = inputs[1];
            if x.len() != 4 || w.len() != 4 {
                return Err(format!("Conv2D needs rank-4 input and kernel, got {x:?} and {w:?}"));
            }
            if w[2] != x[3] {
                return Err(format!("kernel Cin {} != input channels {}", w[2], x[3]));
            }
            check_bias(inputs, w[3])?;
            let oh = conv_output_dim(x[1], w[0], stride[0], *padding);
            let ow = conv_output_dim(x[2], w[1], stride[1], *padding);
            match (oh, ow) {
                (Some(oh), Some(ow)) => vec![vec![x[0], oh, ow, w[3]]],
                _ => return Err(format!("kernel {w:?} with stride {stride:?} does not fit input {x:?}")),
            }
        }
        Op::Reshape { shape } => {
            if shape.iter().any(|&d| d == 0) {
                return Err(format!("reshape target {shape:?} has a zero dimension"));
            }
            if element_count(shape) != element_count(x) {
                return Err(format!("cannot reshape {x:?} to {shape:?}"));
            }
            vec![shape.clone()]
        }
        Op::Mean { axes, keep_dims } => {
            let set: HashSet<usize> = axes.iter().copied().collect();
            if axes.is_empty() || set.len() != axes.len() || axes.iter().any(|&a| a >= x.len()) {
                return Err(format!("bad reduction axes {axes:?} for rank {}", x.len()));
            }
            let o: Vec<usize> = if *keep_dims {
                x.iter().enumerate().map(|(i, &d)| if set.contains(&i) { 1 } else { d }).collect()
            } else {
                x.iter().enumerate().filter(|(i, _)| !set.contains(i)).map(|(_, &d)| d).collect()
            };
            vec![if o.is_empty() { vec![1] } else { o }]
        }
        op if op.is_binary_elementwise() => match broadcast_shapes(x, inputs[1]) {
            Some(s) => vec![s],
            None => return Err(format!("cannot broadcast {x:?} with {:?}", inputs[1])),
        },
        Op::Rsqrt | Op::Tanh | Op::Gelu => vec![x.to_vec()],
        Op::Concat { axis } => {
            if *axis >= x.len() {
                return Err(format!("concat axis {axis} out of range for rank {}", x.len()));
            }
            let mut o = x.to_vec();
            o[*axis] = 0;
            for s in inputs {
                let same_rest = s.len() == x.len()
                    && s.iter().zip(x).enumerate().all(|(i, (a, b))| i == *axis || a == b);
                if !same_rest {
                    return Err(format!("concat operand {s:?} incompatible with {x:?}"));
                }
                o[*axis] += s[*axis];
            }
            vec![o]
        }
        Op::Split { axis, parts } => {
            if *axis >= x.len() || *parts == 0 || x[*axis] % parts != 0 {
                return Err(format!("cannot split {x:?} into {parts} parts on axis {axis}"));
            }
            let mut o = x.to_vec();
            o[*axis] /= parts;
            vec![o; *parts]
        }
        Op::BroadcastTo { shape } => match broadcast_shapes(x, shape) {
            Some(s) if &s == shape => vec![s],
            _ => return Err(format!("cannot broadcast {x:?} to {shape:?}")),
        },
        Op::GroupNorm { groups, epsilon } => {
            if x.len() != 4 {
                return Err(format!("GroupNorm needs a rank-4 input, got {x:?}"));
            }
            if *groups == 0 || x[3] % groups != 0 {
                return Err(format!("{} channels not divisible by {groups} groups", x[3]));
            }
            if !(*epsilon >= 0.0) {
                return Err(format!("epsilon {epsilon} must be non-negative"));
            }
            for p in &inputs[1..] {
                if p != &[x[3]] {
                    return Err(format!("gamma/beta shape {p:?} != [{}]", x[3]));
                }
            }
            vec![x.to_vec()]
        }
        _ => unreachable!("all ops covered"),
    };
    if let Some(s) = out.iter().find(|s| s.len() > MAX_RANK) {
        return Err(format!("result rank {} exceeds {MAX_RANK}", s.len()));
    }
    Ok(out)
}

fn check_bias(inputs: &[&[usize]], cout: usize) -> std::result::Result<(), String> {
    match inputs.get(2) {
        Some(b) if *b != [cout] => Err(format!("bias shape {b:?} != [{cout}]")),
        _ => Ok(()),
    }
}

/// Returns a copy of `g` in which every node output carries an inferred
/// declaration. Declared shapes that disagree with inference are an error.
pub fn infer_shapes(g: &Graph) -> Result<Graph> {
    let mut out = g.clone();
    for id in &g.inputs {
        if !g.tensors.contains_key(id) {
            return Err(Error::Shape {
                node: id.clone(),
                reason: "graph input has no declared shape".into(),
            });
        }
    }
    for node in &g.nodes {
        let shapes: Vec<&[usize]> = node
            .inputs
            .iter()
            .map(|i| {
                out.shape_of(i).ok_or_else(|| Error::Shape {
                    node: node.id.clone(),
                    reason: format!("input `{i}` has no shape"),
                })
            })
            .collect::<Result<_>>()?;
        let inferred = infer_node_shapes(&node.op, &shapes).map_err(|reason| Error::Shape {
            node: node.id.clone(),
            reason,
        })?;
        if inferred.len() != node.outputs.len() {
            return Err(Error::Shape {
                node: node.id.clone(),
                reason: format!("{} outputs declared, {} produced", node.outputs.len(), inferred.len()),
            });
        }
        let dtype = node
            .inputs
            .iter()
            .find_map(|i| out.tensors.get(i).map(|d| d.dtype))
            .unwrap_or(DType::F32);
        for (id, shape) in node.outputs.iter().zip(inferred) {
            match out.tensors.get(id) {
                Some(decl) if decl.shape != shape => {
                    return Err(Error::Shape {
                        node: node.id.clone(),
                        reason: format!("`{id}` declared {:?} but inferred {shape:?}", decl.shape),
                    })
                }
                Some(_) => {}
                None => {
                    out.tensors.insert(id.clone(), TensorDecl { shape, dtype });
                }
            }
        }
    }
    Ok(out)
}

use super::{rewrite_nodes, PassReport};
use crate::error::{Error, Result};
use crate::graph::{Graph, IdGen, Node, Op, Padding};

const PASS: &str = "fc_to_conv";

/// Rewrites every FullyConnected node as Reshape -> 1x1 Conv2D -> Reshape.
///
/// An input `[B, L, Cin]` becomes `[B, L, 1, Cin]` (height L, width 1); a
/// rank-2 input `[L, Cin]` becomes `[1, L, 1, Cin]`. The kernel
/// `[1, 1, Cin, Cout]` has the same row-major layout as `W [Cin, Cout]`, so
/// the weights are reused verbatim, quantized or not.
pub fn fc_to_conv(g: &Graph) -> Result<(Graph, PassReport)> {
    let mut report = PassReport::new(PASS);
    let mut ids = IdGen::for_graph(g);
    let out = rewrite_nodes(g, &mut report, |graph, node| {
        if node.op != Op::FullyConnected {
            return Ok(None);
        }
        let x = graph.require_shape(&node.inputs[0])?.to_vec();
        let (batch, rows, cin) = match x.as_slice() {
            [l, c] => (1, *l, *c),
            [b, l, c] => (*b, *l, *c),
            _ => {
                return Err(Error::pass(
                    PASS,
                    &node.id,
                    format!("input rank {} is not 2 or 3", x.len()),
                ))
            }
        };
        let w_id = &node.inputs[1];
        let w = graph
            .initializers
            .get(w_id)
            .ok_or_else(|| Error::pass(PASS, &node.id, format!("weight `{w_id}` is not an initializer")))?;
        let cout = w.shape()[1];
        let kernel = w.reshaped(vec![1, 1, cin, cout])?;
        let kernel_id = ids.fresh(&format!("{w_id}/kernel"));
        graph.initializers.insert(kernel_id.clone(), kernel);

        let x4 = ids.fresh(&format!("{}/x4", node.id));
        let y4 = ids.fresh(&format!("{}/y4", node.id));
        let mut conv_inputs = vec![x4.clone(), kernel_id];
        conv_inputs.extend(node.inputs.get(2).cloned());
        let mut out_shape = x.clone();
        *out_shape.last_mut().unwrap() = cout;
        Ok(Some(vec![
            Node::new(
                ids.fresh(&format!("{}/reshape_in", node.id)),
                Op::Reshape { shape: vec![batch, rows, 1, cin] },
                [node.inputs[0].clone()],
                [x4],
            ),
            Node::new(
                ids.fresh(&format!("{}/conv", node.id)),
                Op::Conv2D { stride: [1, 1], padding: Padding::Valid },
                conv_inputs,
                [y4.clone()],
            ),
            Node::new(
                ids.fresh(&format!("{}/reshape_out", node.id)),
                Op::Reshape { shape: out_shape },
                [y4],
                node.outputs.clone(),
            ),
        ]))
    })?;
    report.meta("converted", report.nodes_removed.len());
    Ok((out, report))
}

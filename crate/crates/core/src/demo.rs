//! Deterministic demo graphs imitating diffusion U-Net blocks.
//!
//! Every initializer is drawn from [`Lcg64`] seeded with the demo seed,
//! uniformly in `[-0.5, 0.5)`, in the order the builder creates them. The
//! same `(name, seed, size)` therefore always produces the same bytes.
//!
//! Conv and FC weights additionally get a per-output-channel gain in
//! `[0.05, 1)`, drawn after the values, so filters differ in magnitude the
//! way trained ones do.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{infer_shapes, validate, Graph, Node, Op, Padding};
use crate::rng::Lcg64;
use crate::tensor::{element_count, Tensor};

pub const DEMO_NAMES: [&str; 6] = [
    "fc_block",
    "big_conv",
    "groupnorm_block",
    "gelu_block",
    "transformer_like",
    "unet_like",
];

pub const GROUPNORM_EPSILON: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    /// Channel counts of at most 16; cheap enough to execute.
    Tiny,
    /// The large activation shapes the delegate chokes on.
    PaperShape,
}

impl SizeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::Tiny => "tiny",
            SizeClass::PaperShape => "paper_shape",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoSpec {
    pub name: String,
    pub seed: u64,
    pub size: SizeClass,
}

impl DemoSpec {
    pub fn new(name: impl Into<String>, seed: u64, size: SizeClass) -> Self {
        DemoSpec {
            name: name.into(),
            seed,
            size,
        }
    }
}

struct Builder {
    g: Graph,
    rng: Lcg64,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Builder {
            g: Graph::new(),
            rng: Lcg64::new(seed),
        }
    }

    fn weight(&mut self, id: &str, shape: Vec<usize>) -> String {
        let data = self.rng.fill_uniform(element_count(&shape), -0.5, 0.5);
        let t = Tensor::from_f32(shape, data).expect("shape matches data");
        self.g.add_initializer(id, t);
        id.to_string()
    }

    /// A weight whose last axis indexes output channels.
    fn filters(&mut self, id: &str, shape: Vec<usize>) -> String {
        let cout = *shape.last().expect("weights have a channel axis");
        let mut data = self.rng.fill_uniform(element_count(&shape), -0.5, 0.5);
        let gains = self.rng.fill_uniform(cout, 0.05, 1.0);
        for (i, v) in data.iter_mut().enumerate() {
            *v *= gains[i % cout];
        }
        let t = Tensor::from_f32(shape, data).expect("shape matches data");
        self.g.add_initializer(id, t);
        id.to_string()
    }

    fn node(&mut self, id: &str, op: Op, inputs: &[&str], out: &str) -> String {
        self.g.add_node(Node::new(id, op, inputs.iter().copied(), [out]));
        out.to_string()
    }

    fn fc(&mut self, id: &str, x: &str, cin: usize, cout: usize, out: &str) -> String {
        let w = self.filters(&format!("{id}.weight"), vec![cin, cout]);
        let b = self.weight(&format!("{id}.bias"), vec![cout]);
        self.node(id, Op::FullyConnected, &[x, &w, &b], out)
    }

    fn conv3x3(&mut self, id: &str, x: &str, cin: usize, cout: usize, bias: bool, out: &str) -> String {
        let w = self.filters(&format!("{id}.weight"), vec![3, 3, cin, cout]);
        let mut inputs = vec![x.to_string(), w];
        if bias {
            inputs.push(self.weight(&format!("{id}.bias"), vec![cout]));
        }
        let inputs: Vec<&str> = inputs.iter().map(String::as_str).collect();
        let op = Op::Conv2D {
            stride: [1, 1],
            padding: Padding::Same,
        };
        self.node(id, op, &inputs, out)
    }

    fn group_norm(&mut self, id: &str, x: &str, c: usize, groups: usize, out: &str) -> String {
        let gamma = self.weight(&format!("{id}.gamma"), vec![c]);
        let beta = self.weight(&format!("{id}.beta"), vec![c]);
        let op = Op::GroupNorm {
            groups,
            epsilon: GROUPNORM_EPSILON,
        };
        self.node(id, op, &[x, &gamma, &beta], out)
    }

    fn finish(mut self, output: &str) -> Result<Graph> {
        self.g.outputs.push(output.to_string());
        let g = infer_shapes(&self.g)?;
        if let Some(d) = validate(&g).first() {
            return Err(Error::InvalidGraph(format!("demo graph: {d}")));
        }
        Ok(g)
    }
}

/// Builds the named demo graph.
///
/// | name | tiny | paper_shape |
/// |------|------|-------------|
/// | `fc_block` | FC 8->8 on 1x16x8 | FC 320->320 on 1x4096x320 |
/// | `big_conv` | 3x3 conv 1x4x4x12 -> 4 | 3x3 conv 1x32x32x1920 -> 640 |
/// | `groupnorm_block` | 1x4x4x8, 2 groups | 1x64x64x320, 32 groups |
/// | `gelu_block` | FC 8->16, GELU, FC 16->8 | FC 320->1280, GELU, FC 1280->320 |
/// | `transformer_like` | GroupNorm, FC/GELU/FC, 3x3 conv at 4x4x8 | the same at 64x64x320 |
/// | `unet_like` | concat 8+4 channels, GroupNorm, 3x3 conv -> 4, GELU | concat 1280+640 at 32x32, conv -> 640 |
pub fn make_demo(spec: &DemoSpec) -> Result<Graph> {
    let tiny = spec.size == SizeClass::Tiny;
    let mut b = Builder::new(spec.seed);
    match spec.name.as_str() {
        "fc_block" => {
            let (l, c) = if tiny { (16, 8) } else { (4096, 320) };
            b.g.add_input("x", vec![1, l, c]);
            let y = b.fc("fc", "x", c, c, "y");
            b.finish(&y)
        }
        "big_conv" => {
            let (hw, cin, cout) = if tiny { (4, 12, 4) } else { (32, 1920, 640) };
            b.g.add_input("x", vec![1, hw, hw, cin]);
            let y = b.conv3x3("conv", "x", cin, cout, false, "y");
            b.finish(&y)
        }
        "groupnorm_block" => {
            let (hw, c, groups) = if tiny { (4, 8, 2) } else { (64, 320, 32) };
            b.g.add_input("x", vec![1, hw, hw, c]);
            let y = b.group_norm("norm", "x", c, groups, "y");
            b.finish(&y)
        }
        "gelu_block" => {
            let (l, c) = if tiny { (16, 8) } else { (4096, 320) };
            let hidden = if tiny { 2 * c } else { 4 * c };
            b.g.add_input("x", vec![1, l, c]);
            b.fc("ff.proj", "x", c, hidden, "h");
            b.node("ff.gelu", Op::Gelu, &["h"], "a");
            let y = b.fc("ff.out", "a", hidden, c, "y");
            b.finish(&y)
        }
        "transformer_like" => {
            let (hw, c, groups) = if tiny { (4, 8, 2) } else { (64, 320, 32) };
            let hidden = if tiny { 2 * c } else { 4 * c };
            b.g.add_input("x", vec![1, hw, hw, c]);
            b.group_norm("norm", "x", c, groups, "n");
            b.node("to_seq", Op::Reshape { shape: vec![1, hw * hw, c] }, &["n"], "s");
            b.fc("ff.proj", "s", c, hidden, "h");
            b.node("ff.gelu", Op::Gelu, &["h"], "a");
            b.fc("ff.out", "a", hidden, c, "f");
            b.node("to_map", Op::Reshape { shape: vec![1, hw, hw, c] }, &["f"], "m");
            let y = b.conv3x3("proj_out", "m", c, c, true, "y");
            b.finish(&y)
        }
        "unet_like" => {
            let (hw, c1, c2, cout, groups) = if tiny { (4, 8, 4, 4, 4) } else { (32, 1280, 640, 640, 32) };
            b.g.add_input("x", vec![1, hw, hw, c1]);
            b.g.add_input("skip", vec![1, hw, hw, c2]);
            b.node("cat", Op::Concat { axis: 3 }, &["x", "skip"], "c");
            b.group_norm("norm", "c", c1 + c2, groups, "n");
            b.conv3x3("conv", "n", c1 + c2, cout, true, "h");
            let y = b.node("act", Op::Gelu, &["h"], "y");
            b.finish(&y)
        }
        other => Err(Error::UnknownDemo(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::to_json_string;

    #[test]
    fn every_demo_validates() {
        for name in DEMO_NAMES {
            let g = make_demo(&DemoSpec::new(name, 7, SizeClass::Tiny)).unwrap();
            assert!(validate(&g).is_empty(), "{name}");
            for t in g.initializers.values() {
                assert!(t.values().unwrap().iter().all(|v| (-0.5..0.5).contains(v)));
            }
        }
    }

    #[test]
    fn tiny_channels_are_small() {
        for name in DEMO_NAMES {
            let g = make_demo(&DemoSpec::new(name, 1, SizeClass::Tiny)).unwrap();
            for id in g.tensors.keys() {
                let s = g.shape_of(id).unwrap();
                if s.len() == 4 {
                    assert!(s[3] <= 16, "{name}: {id} {s:?}");
                }
            }
        }
    }

    #[test]
    fn deterministic_bytes() {
        let spec = DemoSpec::new("unet_like", 42, SizeClass::Tiny);
        let a = to_json_string(&make_demo(&spec).unwrap());
        let b = to_json_string(&make_demo(&spec).unwrap());
        assert_eq!(a, b);
        let c = to_json_string(&make_demo(&DemoSpec::new("unet_like", 43, SizeClass::Tiny)).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(
            make_demo(&DemoSpec::new("resnet", 0, SizeClass::Tiny)),
            Err(Error::UnknownDemo(_))
        ));
    }
}

mod common;

use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;
use squeezepass_core::delegation::{partition, CapabilityProfile};
use squeezepass_core::demo::{make_demo, DemoSpec, SizeClass, DEMO_NAMES};
use squeezepass_core::graph::{load_graph, parse_graph, save_graph, to_json_string, validate, Graph, Node, Op};
use squeezepass_core::interp::{execute, random_bindings, ExecMode};
use squeezepass_core::passes::converter_baseline;
use squeezepass_core::rng::Lcg64;
use squeezepass_core::tensor::Tensor;

fn demo(name: &str, seed: u64) -> Graph {
    make_demo(&DemoSpec::new(name, seed, SizeClass::Tiny)).unwrap()
}

/// A random topological order of `g`'s nodes (Kahn's algorithm with a
/// random pick among the ready nodes).
fn shuffle_topologically(g: &Graph, seed: u64) -> Graph {
    let mut rng = Lcg64::new(seed);
    let producer: BTreeMap<&str, usize> = g
        .nodes
        .iter()
        .enumerate()
        .flat_map(|(i, n)| n.outputs.iter().map(move |o| (o.as_str(), i)))
        .collect();
    let deps: Vec<HashSet<usize>> = g
        .nodes
        .iter()
        .map(|n| n.inputs.iter().filter_map(|i| producer.get(i.as_str()).copied()).collect())
        .collect();
    let mut done: HashSet<usize> = HashSet::new();
    let mut order = Vec::new();
    while order.len() < g.nodes.len() {
        let ready: Vec<usize> = (0..g.nodes.len())
            .filter(|i| !done.contains(i) && deps[*i].iter().all(|d| done.contains(d)))
            .collect();
        let pick = ready[rng.below(ready.len() as u64) as usize];
        done.insert(pick);
        order.push(pick);
    }
    let mut out = g.clone();
    out.nodes = order.into_iter().map(|i| g.nodes[i].clone()).collect();
    out
}

#[test]
fn demos_round_trip_through_json() {
    for name in DEMO_NAMES {
        let g = demo(name, 5);
        let text = to_json_string(&g);
        let back = parse_graph(&text).unwrap();
        assert_eq!(back, g, "{name}");
        assert_eq!(to_json_string(&back), text);
    }
}

#[test]
fn round_trip_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    let g = converter_baseline(&demo("unet_like", 2)).unwrap();
    save_graph(&g, &path).unwrap();
    assert_eq!(load_graph(&path).unwrap(), g);
}

#[test]
fn malformed_documents_name_the_field() {
    let g = demo("fc_block", 1);
    let mut doc: serde_json::Value = serde_json::from_str(&to_json_string(&g)).unwrap();
    doc["nodes"][0]["op"] = "Softmax".into();
    let err = parse_graph(&doc.to_string()).unwrap_err().to_string();
    assert!(err.contains("nodes[0]"), "{err}");
    assert!(parse_graph("{").is_err());
    assert!(parse_graph("{\"version\": 1}").is_err());
}

#[test]
fn shuffled_graphs_still_validate_and_partition_the_same() {
    let profile = CapabilityProfile::mobile_gpu();
    for name in DEMO_NAMES {
        let g = converter_baseline(&demo(name, 3)).unwrap();
        let base = partition(&g, &profile).unwrap();
        let by_node: BTreeMap<_, _> = base.assignments.iter().map(|a| (a.node.clone(), a.clone())).collect();
        for seed in 0..5 {
            let h = shuffle_topologically(&g, seed);
            assert!(validate(&h).is_empty(), "{name}");
            let r = partition(&h, &profile).unwrap();
            assert_eq!(r.complete, base.complete);
            for a in &r.assignments {
                assert_eq!(&by_node[&a.node], a, "{name}");
            }
        }
    }
}

#[test]
fn shuffled_graphs_execute_identically() {
    for name in DEMO_NAMES {
        let g = converter_baseline(&demo(name, 4)).unwrap();
        let mut rng = Lcg64::new(9);
        let b = random_bindings(&g, &mut rng, -3.0, 3.0).unwrap();
        for mode in [ExecMode::F32, ExecMode::F16Emulated] {
            let want = execute(&g, &b, mode).unwrap().outputs;
            for seed in 0..3 {
                let got = execute(&shuffle_topologically(&g, seed), &b, mode).unwrap().outputs;
                for (id, t) in &want {
                    let a: Vec<u32> = t.to_f32_vec().iter().map(|v| v.to_bits()).collect();
                    let c: Vec<u32> = got[id].to_f32_vec().iter().map(|v| v.to_bits()).collect();
                    assert_eq!(a, c, "{name} {id}");
                }
            }
        }
    }
}

fn arb_graph() -> impl Strategy<Value = Graph> {
    let unary = prop_oneof![Just(Op::Tanh), Just(Op::Rsqrt), Just(Op::Gelu)];
    let binary = prop_oneof![
        Just(Op::Add),
        Just(Op::Sub),
        Just(Op::Mul),
        Just(Op::Minimum),
        Just(Op::Maximum),
        Just(Op::SquaredDifference)
    ];
    let step = prop_oneof![unary.prop_map(|o| (o, false)), binary.prop_map(|o| (o, true))];
    (
        1usize..4,
        1usize..5,
        prop::collection::vec((step, any::<prop::sample::Index>(), prop::collection::vec(-4.0f32..4.0, 4)), 1..8),
    )
        .prop_map(|(a, b, steps)| {
            let shape = vec![a, b];
            let mut g = Graph::new();
            g.add_input("x", shape.clone());
            let mut avail = vec!["x".to_string()];
            for (i, ((op, binary), pick, vals)) in steps.into_iter().enumerate() {
                let lhs = avail[avail.len() - 1].clone();
                let mut inputs = vec![lhs];
                if binary {
                    if pick.index(2) == 0 {
                        let w = format!("w{i}");
                        let data: Vec<f32> = vals.iter().cycle().take(a * b).copied().collect();
                        g.add_initializer(w.clone(), Tensor::from_f32(shape.clone(), data).unwrap());
                        inputs.push(w);
                    } else {
                        inputs.push(pick.get(&avail).clone());
                    }
                }
                let out = format!("t{i}");
                g.add_node(Node::new(format!("n{i}"), op, inputs, [out.clone()]));
                avail.push(out);
            }
            g.outputs.push(avail.last().unwrap().clone());
            squeezepass_core::graph::infer_shapes(&g).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_graphs_round_trip(g in arb_graph()) {
        prop_assert!(validate(&g).is_empty());
        let back = parse_graph(&to_json_string(&g)).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn quantized_initializers_round_trip(vals in prop::collection::vec(-1.0f32..1.0, 6), per_channel: bool) {
        let mut g = Graph::new();
        g.add_input("x", vec![1, 2, 2, 3]);
        let w = Tensor::from_f32(vec![1, 1, 3, 2], vals).unwrap();
        let q = squeezepass_core::compression::quantize_tensor(&w, per_channel, 127).unwrap();
        g.add_initializer("w", q);
        g.add_node(Node::new(
            "c",
            Op::Conv2D { stride: [1, 1], padding: squeezepass_core::Padding::Valid },
            ["x", "w"],
            ["y"],
        ));
        g.outputs.push("y".into());
        let g = squeezepass_core::graph::infer_shapes(&g).unwrap();
        prop_assert_eq!(parse_graph(&to_json_string(&g)).unwrap(), g);
    }
}

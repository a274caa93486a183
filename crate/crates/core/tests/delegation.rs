mod common;

use proptest::prelude::*;
use squeezepass_core::delegation::{
    admit, estimate_cost, node_macs, partition, CapabilityProfile, CostModel, Placement, RejectReason,
};
use squeezepass_core::demo::{make_demo, DemoSpec, SizeClass, DEMO_NAMES};
use squeezepass_core::graph::{infer_shapes, Graph, Node, Op, Padding};
use squeezepass_core::passes::{conv_serialize_input, conv_serialize_output, converter_baseline, run_pipeline};
use squeezepass_core::tensor::Tensor;

fn demo(name: &str, size: SizeClass) -> Graph {
    make_demo(&DemoSpec::new(name, 0, size)).unwrap()
}

#[test]
fn mobile_profile_examples() {
    let p = CapabilityProfile::mobile_gpu();
    let g = infer_shapes(&demo("big_conv", SizeClass::PaperShape)).unwrap();
    let a = admit(&g, &g.nodes[0], &p);
    assert!(!a.admitted);
    assert_eq!(
        a.reasons,
        vec![RejectReason::IoBudget {
            io_elements: 2_621_440,
            budget: 2_097_152
        }]
    );
    assert_eq!(a.reason().unwrap().short(), "io budget");

    let mut g = Graph::new();
    g.add_input("a", vec![1, 1, 1, 1]);
    g.add_input("b", vec![1, 1, 1, 1]);
    g.add_node(Node::new("add", Op::Add, ["a", "b"], ["c"]));
    g.outputs.push("c".into());
    let g = infer_shapes(&g).unwrap();
    assert!(admit(&g, &g.nodes[0], &p).admitted);
}

#[test]
fn strict_budget_boundary() {
    // 1x32x32x1920 in, 1x32x32x128 out: exactly 2^21 elements
    let mut g = Graph::new();
    g.add_input("x", vec![1, 32, 32, 1920]);
    g.add_initializer("w", Tensor::zeros(vec![1, 1, 1920, 128]));
    g.add_node(Node::new("c", Op::Conv2D { stride: [1, 1], padding: Padding::Valid }, ["x", "w"], ["y"]));
    g.outputs.push("y".into());
    let g = infer_shapes(&g).unwrap();
    assert!(!admit(&g, &g.nodes[0], &CapabilityProfile::mobile_gpu()).admitted);
    let roomier = CapabilityProfile::mobile_gpu().with_budget(Some(2_097_153));
    assert!(admit(&g, &g.nodes[0], &roomier).admitted);
}

#[test]
fn profile_json_errors() {
    assert!(CapabilityProfile::from_json("{}").is_err());
    assert!(CapabilityProfile::from_json("{\"name\": \"x\", \"supported_ops\": [\"Softmax\"]}").is_err());
}

fn chain() -> Graph {
    // A on the device, B a BroadcastTo forced to the CPU, C back on the device
    let mut g = Graph::new();
    g.add_input("x", vec![2, 3]);
    g.add_node(Node::new("A", Op::Tanh, ["x"], ["a"]));
    g.add_node(Node::new("B", Op::BroadcastTo { shape: vec![4, 2, 3] }, ["a"], ["b"]));
    g.add_node(Node::new("C", Op::Tanh, ["b"], ["c"]));
    g.outputs.push("c".into());
    g
}

#[test]
fn device_cpu_device_chain() {
    let r = partition(&chain(), &CapabilityProfile::mobile_gpu()).unwrap();
    let places: Vec<Placement> = r.assignments.iter().map(|a| a.placement).collect();
    assert_eq!(places, [Placement::Device, Placement::Cpu, Placement::Device]);
    assert_eq!(r.transitions, 2);
    assert_eq!(r.transferred_elements, 6 + 24);
    assert_eq!(r.segments.len(), 3);
    assert!(!r.complete);
    let all = partition(&chain(), &CapabilityProfile::unlimited()).unwrap();
    assert!(all.complete);
    assert_eq!((all.transitions, all.transferred_elements), (0, 0));
}

#[test]
fn a_tensor_crosses_once_per_side() {
    let mut g = chain();
    g.add_node(Node::new("D", Op::Tanh, ["b"], ["d"]));
    g.outputs.push("d".into());
    let r = partition(&g, &CapabilityProfile::mobile_gpu()).unwrap();
    assert_eq!(r.transitions, 2);
    assert_eq!(r.transferred_elements, 30);
}

#[test]
fn empty_graph_costs_nothing() {
    let g = Graph::new();
    let r = partition(&g, &CapabilityProfile::mobile_gpu()).unwrap();
    assert!(r.complete);
    assert_eq!(estimate_cost(&g, &r, &CostModel::default()).unwrap(), 0.0);
}

#[test]
fn cost_by_hand() {
    let g = infer_shapes(&chain()).unwrap();
    let r = partition(&g, &CapabilityProfile::mobile_gpu()).unwrap();
    let c = CostModel {
        alpha: 1.0,
        beta: 2.0,
        gamma: 3.0,
        delta: 4.0,
    };
    // macs: 6, 24, 24; io: 12, 30, 48; transferred 30
    let want = 3.0 + 2.0 * 54.0 + 3.0 * 90.0 + 4.0 * 30.0;
    assert_eq!(estimate_cost(&g, &r, &c).unwrap(), want);
    let macs: Vec<usize> = g.nodes.iter().map(|n| node_macs(&g, n)).collect();
    assert_eq!(macs, [6, 24, 24]);
}

#[test]
fn conv_macs_follow_the_kernel() {
    let g = infer_shapes(&demo("big_conv", SizeClass::PaperShape)).unwrap();
    assert_eq!(node_macs(&g, &g.nodes[0]), 32 * 32 * 640 * 9 * 1920);
}

#[test]
fn large_conv_prefers_input_serialization() {
    let g = demo("big_conv", SizeClass::PaperShape);
    let p = CapabilityProfile::mobile_gpu();
    let (i, _) = conv_serialize_input(&g, "conv", 2).unwrap();
    let (o, _) = conv_serialize_output(&g, "conv", 8).unwrap();
    let ri = partition(&i, &p).unwrap();
    let ro = partition(&o, &p).unwrap();
    assert!(ri.complete && ro.complete);
    let cost = CostModel::default();
    let (ci, co) = (estimate_cost(&i, &ri, &cost).unwrap(), estimate_cost(&o, &ro, &cost).unwrap());
    assert!(ci < co, "{ci} vs {co}");
    let doubled = CostModel {
        alpha: 2.0 * cost.alpha,
        ..cost
    };
    assert!(estimate_cost(&i, &ri, &doubled).unwrap() < estimate_cost(&o, &ro, &doubled).unwrap());
}

proptest! {
    #[test]
    fn cost_is_monotone_in_every_weight(
        base in prop::array::uniform4(0.0f64..100.0),
        which in 0usize..4,
        bump in 0.0f64..100.0,
        name in prop::sample::select(DEMO_NAMES.to_vec()),
    ) {
        let g = converter_baseline(&demo(name, SizeClass::Tiny)).unwrap();
        let r = partition(&g, &CapabilityProfile::mobile_gpu()).unwrap();
        let mk = |w: [f64; 4]| CostModel { alpha: w[0], beta: w[1], gamma: w[2], delta: w[3] };
        let mut more = base;
        more[which] += bump;
        prop_assert!(estimate_cost(&g, &r, &mk(more)).unwrap() >= estimate_cost(&g, &r, &mk(base)).unwrap());
        let mut moved = r.clone();
        moved.transferred_elements += 1;
        prop_assert!(estimate_cost(&g, &moved, &mk(base)).unwrap() >= estimate_cost(&g, &r, &mk(base)).unwrap());
    }
}

#[test]
fn complete_partitions_move_nothing() {
    let p = CapabilityProfile::mobile_gpu();
    for size in [SizeClass::Tiny, SizeClass::PaperShape] {
        for name in DEMO_NAMES {
            let g = demo(name, size);
            for h in [converter_baseline(&g).unwrap(), run_pipeline(&g, &p, &CostModel::default()).unwrap().0] {
                let r = partition(&h, &p).unwrap();
                if r.complete {
                    assert_eq!(r.transferred_elements, 0);
                    assert_eq!(r.transitions, 0);
                    assert_eq!(r.cpu_nodes().count(), 0);
                }
            }
        }
    }
}

#[test]
fn paper_shape_demos_need_the_pipeline() {
    let p = CapabilityProfile::mobile_gpu();
    for name in DEMO_NAMES {
        let g = demo(name, SizeClass::PaperShape);
        let before = partition(&converter_baseline(&g).unwrap(), &p).unwrap();
        assert!(!before.complete, "{name}");
        assert!(before.transitions > 0 || before.segments.len() == 1);
        let (h, _) = run_pipeline(&g, &p, &CostModel::default()).unwrap();
        let after = partition(&h, &p).unwrap();
        assert!(after.complete, "{name}: {:?}", after.reason_kinds());
        assert_eq!(after.transitions, 0);
    }
}

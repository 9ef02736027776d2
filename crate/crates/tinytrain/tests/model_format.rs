//! Container round trips, graph surgery, the architecture fixtures, and
//! quantization behavior on whole graphs.

mod common;

use common::{random_tensor, rng, temp_dir};
use proptest::prelude::*;
use rand::Rng;
use tinytrain::engine::{run, ExecutionPlan};
use tinytrain::model::{compose, GraphNode, ModelGraph, NodeOp};
use tinytrain::quant::{dequantize_blob, quantize_blob, quantize_model, size_report};
use tinytrain::tensor::{ActivationKind, Tensor};
use tinytrain::zoo;

#[test]
fn mobilenet_fixture_reproduces_feature_shape() {
    let g = zoo::mobilenet_v2_shaped(3, 8);
    assert_eq!(g.validate().unwrap(), vec![7, 7, 1280]);
    let batch = Tensor::zeros(vec![1, 224, 224, 3]);
    let out = run(&g, &batch).unwrap();
    assert_eq!(out.shape(), &[1, 7, 7, 1280]);
}

#[test]
fn mobilenet_fixture_survives_save_load() {
    let g = zoo::mobilenet_v2_shaped(4, 8);
    let dir = temp_dir("mnv2");
    let path = dir.join("backbone.ttml");
    g.save(&path).unwrap();
    let back = ModelGraph::load(&path).unwrap();
    assert_eq!(back, g);
    assert_eq!(back.validate().unwrap(), vec![7, 7, 1280]);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn yamnet_fixture_truncates_to_feature_shape() {
    let g = zoo::yamnet_shaped(5, 8);
    let backbone = g.truncate(3).unwrap();
    assert_eq!(backbone.validate().unwrap(), vec![3, 2, 1024]);
    let out = run(&backbone, &Tensor::zeros(vec![1, 96, 64, 1])).unwrap();
    assert_eq!(out.shape(), &[1, 3, 2, 1024]);
}

/// A stride-2 depthwise/pointwise stack with total stride 32 lands a
/// (96, 64) input on (3, 2) spatial dims.
#[test]
fn stride_32_stack_gives_3_by_2() {
    let g = zoo::yamnet_shaped(6, 8).truncate(3).unwrap();
    let shape = g.validate().unwrap();
    assert_eq!(&shape[..2], &[3, 2]);
}

#[test]
fn truncate_that_leaves_two_heads_is_rejected() {
    // Two branches off the graph input merged by an add: cutting the add
    // leaves both branches unconsumed.
    let mut g = ModelGraph::new("branches", vec![4, 4, 2]);
    for id in ["left", "right"] {
        g.nodes.push(GraphNode::new(
            id,
            NodeOp::Activation {
                kind: ActivationKind::Relu,
            },
            vec![],
            vec![],
        ));
    }
    g.nodes.push(GraphNode::new(
        "merge",
        NodeOp::Add,
        vec!["left".into(), "right".into()],
        vec![],
    ));
    assert!(g.validate().is_ok());
    let err = g.truncate(1).unwrap_err();
    assert!(matches!(
        err,
        tinytrain::model::ModelError::InvalidTruncation(_)
    ));
}

/// Prefix cuts of the MobileNetV2-style fixture that land after a residual
/// block remain valid and keep only the blobs they reference.
#[test]
fn mobilenet_prefix_truncation_stays_single_output() {
    let g = zoo::mobilenet_v2_shaped(7, 8);
    assert!(
        g.nodes.iter().any(|n| matches!(n.op, NodeOp::Add)),
        "fixture should contain residual adds"
    );
    let t = g.truncate(2).unwrap(); // drop the final 1x1 conv + relu6
    let shape = t.validate().unwrap();
    assert_eq!(&shape[..2], &[7, 7]);
    let referenced: std::collections::HashSet<&str> = t
        .nodes
        .iter()
        .flat_map(|n| n.weight_refs.iter().map(String::as_str))
        .collect();
    assert!(t.weights.keys().all(|k| referenced.contains(k.as_str())));
}

#[test]
fn compose_backbone_and_head_runs_like_two_stages() {
    let backbone = zoo::yamnet_shaped(8, 16).truncate(3).unwrap();
    let mut r = rng(31);
    // Small random head over (3, 2, 1024) features.
    let mut head = ModelGraph::new("head", vec![3, 2, 1024]);
    head.weights
        .insert("w".into(), random_tensor(&mut r, vec![1024, 4], 0.1));
    head.weights.insert("b".into(), Tensor::zeros(vec![4]));
    head.nodes.push(GraphNode::new(
        "gap",
        NodeOp::GlobalAveragePool,
        vec![],
        vec![],
    ));
    head.nodes.push(GraphNode::new(
        "dense",
        NodeOp::Dense,
        vec!["gap".into()],
        vec!["w".into(), "b".into()],
    ));
    head.nodes.push(GraphNode::new(
        "out",
        NodeOp::Activation {
            kind: ActivationKind::Softmax,
        },
        vec!["dense".into()],
        vec![],
    ));

    let composed = compose(&backbone, &head).unwrap();
    let batch = random_tensor(&mut r, vec![2, 96, 64, 1], 0.5);
    let direct = run(&composed, &batch).unwrap();
    let two_stage = run(&head, &run(&backbone, &batch).unwrap()).unwrap();
    let diff: f32 = direct
        .as_f32()
        .unwrap()
        .iter()
        .zip(two_stage.as_f32().unwrap())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f32::max);
    assert!(diff <= 1e-6, "composed vs two-stage diff {diff}");
}

#[test]
fn compose_shape_mismatch_between_fixtures() {
    let backbone = zoo::yamnet_shaped(9, 16).truncate(3).unwrap(); // (3,2,1024)
    let mut head = ModelGraph::new("head", vec![7, 7, 1280]);
    head.weights
        .insert("w".into(), Tensor::zeros(vec![1280, 2]));
    head.weights.insert("b".into(), Tensor::zeros(vec![2]));
    head.nodes.push(GraphNode::new(
        "gap",
        NodeOp::GlobalAveragePool,
        vec![],
        vec![],
    ));
    head.nodes.push(GraphNode::new(
        "dense",
        NodeOp::Dense,
        vec!["gap".into()],
        vec!["w".into(), "b".into()],
    ));
    assert!(matches!(
        compose(&backbone, &head),
        Err(tinytrain::model::ModelError::ShapeMismatch(_))
    ));
}

/// Splitting a graph at any point and re-composing the two halves does not
/// change what it computes.
#[test]
fn truncate_plus_tail_recomposes_to_the_same_function() {
    let g = zoo::yamnet_shaped(12, 16);
    let drop = 3;
    let backbone = g.truncate(drop).unwrap();
    let feature_shape = backbone.validate().unwrap();

    // Rebuild the dropped suffix as its own graph.
    let mut tail = ModelGraph::new("tail", feature_shape);
    for (i, node) in g.nodes[g.nodes.len() - drop..].iter().enumerate() {
        let mut node = node.clone();
        if i == 0 {
            node.inputs.clear(); // now reads the tail graph's input
        }
        for blob in &node.weight_refs {
            tail.weights.insert(blob.clone(), g.weights[blob].clone());
        }
        tail.nodes.push(node);
    }
    let recomposed = compose(&backbone, &tail).unwrap();

    let mut r = rng(64);
    let batch = random_tensor(&mut r, vec![2, 96, 64, 1], 0.5);
    let direct = run(&g, &batch).unwrap();
    let split = run(&recomposed, &batch).unwrap();
    let diff: f32 = direct
        .as_f32()
        .unwrap()
        .iter()
        .zip(split.as_f32().unwrap())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f32::max)
        ;
    assert!(diff <= 1e-5, "split graph diverged by {diff}");
}

#[test]
fn batch_consistency_of_the_engine() {
    let g = zoo::yamnet_shaped(10, 16).truncate(3).unwrap();
    let plan = ExecutionPlan::new(&g).unwrap();
    let mut r = rng(55);
    let batch = random_tensor(&mut r, vec![3, 96, 64, 1], 0.5);
    let full = plan.run(&batch).unwrap();
    let data = batch.as_f32().unwrap();
    let stride: usize = 96 * 64;
    let out_stride: usize = full.len() / 3;
    for i in 0..3 {
        let single = Tensor::from_f32(
            vec![1, 96, 64, 1],
            data[i * stride..(i + 1) * stride].to_vec(),
        )
        .unwrap();
        let out = plan.run(&single).unwrap();
        let diff: f32 = out
            .as_f32()
            .unwrap()
            .iter()
            .zip(&full.as_f32().unwrap()[i * out_stride..(i + 1) * out_stride])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max);
        assert!(diff <= 1e-5, "sample {i} diff {diff}");
    }
}

#[test]
fn million_weight_model_size_arithmetic() {
    // fc1: 1024x976 + fc2: 976x10 = 1009384 weights, ~4 MB float.
    let g = zoo::dense_classifier(1, 1024, 976, 10);
    let weight_count: usize = g.weights.values().map(Tensor::len).sum();
    assert!(weight_count >= 1_000_000);

    let dir = temp_dir("size");
    let float_path = dir.join("float.ttml");
    let float_bytes = g.save(&float_path).unwrap();
    assert!((float_bytes as i64 - (weight_count * 4) as i64).unsigned_abs() < 10_000);

    let q = quantize_model(&g).unwrap();
    let quant_path = dir.join("quant.ttml");
    q.save(&quant_path).unwrap();
    let report = size_report(&float_path, &quant_path).unwrap();
    let reduction = report.reduction();
    assert!(
        (0.70..=0.78).contains(&reduction),
        "reduction {reduction} outside [0.70, 0.78]"
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn quantized_model_agrees_with_float_model() {
    let g = zoo::dense_classifier(2, 1024, 976, 10);
    let q = quantize_model(&g).unwrap();
    let float_plan = ExecutionPlan::new(&g).unwrap();
    let quant_plan = ExecutionPlan::new(&q).unwrap();
    let mut r = rng(77);
    let mut agree = 0usize;
    for _ in 0..100 {
        let input = random_tensor(&mut r, vec![1, 1, 1, 1024], 1.0);
        let pf = float_plan.run(&input).unwrap();
        let pq = quant_plan.run(&input).unwrap();
        let af = tinytrain::engine::argmax(pf.as_f32().unwrap());
        let aq = tinytrain::engine::argmax(pq.as_f32().unwrap());
        if af == aq {
            agree += 1;
        }
    }
    assert!(agree >= 98, "only {agree}/100 top-1 agreement");
}

#[test]
fn quantized_graph_round_trips_with_qparams() {
    let g = quantize_model(&zoo::dense_classifier(3, 64, 32, 4)).unwrap();
    let dir = temp_dir("qserde");
    let path = dir.join("q.ttml");
    g.save(&path).unwrap();
    let back = ModelGraph::load(&path).unwrap();
    assert_eq!(back, g);
    let (qv, scale) = back.weights["fc1.w"].as_qint8().unwrap();
    let (qv2, scale2) = g.weights["fc1.w"].as_qint8().unwrap();
    assert_eq!(qv, qv2);
    assert_eq!(scale, scale2);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn engine_dequantize_path_equals_manual_dequantize() {
    let g = zoo::dense_classifier(4, 128, 64, 5);
    let q = quantize_model(&g).unwrap();
    // Replace every quantized blob with its dequantized floats; the engine
    // must produce bit-identical outputs for both graphs.
    let mut manual = q.clone();
    for blob in manual.weights.values_mut() {
        if blob.is_quantized() {
            *blob = dequantize_blob(blob).unwrap();
        }
    }
    manual.metadata.remove(tinytrain::model::META_QUANTIZED);
    let mut r = rng(12);
    let input = random_tensor(&mut r, vec![2, 1, 1, 128], 1.0);
    let a = run(&q, &input).unwrap();
    let b = run(&manual, &input).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Random dense-chain graphs survive save -> load structurally intact.
    #[test]
    fn random_graph_round_trips(seed in 0u64..10_000, layers in 1usize..4) {
        let mut r = rng(seed);
        let mut dims = vec![r.random_range(1..6usize)];
        for _ in 0..layers {
            dims.push(r.random_range(1..6usize));
        }
        let mut g = ModelGraph::new(format!("g{seed}"), vec![dims[0]]);
        for layer in 0..layers {
            let w = random_tensor(&mut r, vec![dims[layer], dims[layer + 1]], 1.0);
            g.weights.insert(format!("w{layer}"), w);
            g.weights.insert(format!("b{layer}"), random_tensor(&mut r, vec![dims[layer + 1]], 0.4));
            let inputs = if layer == 0 { vec![] } else { vec![format!("fc{}", layer - 1)] };
            g.nodes.push(GraphNode::new(
                format!("fc{layer}"),
                NodeOp::Dense,
                inputs,
                vec![format!("w{layer}"), format!("b{layer}")],
            ));
        }
        g.metadata.insert("k".into(), format!("value with spaces {seed}"));
        let back = ModelGraph::from_bytes(&g.to_bytes()).unwrap();
        prop_assert_eq!(back, g);
    }

    /// Quantize -> dequantize error stays within scale/2 per element.
    #[test]
    fn quantize_roundtrip_error_bound(seed in 0u64..10_000, len in 1usize..300) {
        let mut r = rng(seed);
        let scale_mag: f32 = r.random_range(0.01..10.0);
        let t = random_tensor(&mut r, vec![len], scale_mag);
        let q = quantize_blob(&t).unwrap();
        let (_, scale) = q.as_qint8().unwrap();
        let back = dequantize_blob(&q).unwrap();
        for (orig, rec) in t.as_f32().unwrap().iter().zip(back.as_f32().unwrap()) {
            prop_assert!((orig - rec).abs() <= scale / 2.0 + scale * 1e-5);
        }
        // Requantizing the dequantized weights changes no q value.
        let q2 = quantize_blob(&back).unwrap();
        prop_assert_eq!(q.as_qint8().unwrap().0, q2.as_qint8().unwrap().0);
    }
}

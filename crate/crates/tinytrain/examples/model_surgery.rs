//! Working with `.ttml` model files directly: save/load round trips,
//! stripping prediction layers with `truncate`, stitching a backbone and a
//! head together with `compose`, and reading the embedded manifest.
//!
//! ```bash
//! cargo run --release --example model_surgery
//! ```

use tinytrain::model::{compose, GraphNode, ModelGraph, NodeOp};
use tinytrain::tensor::{ActivationKind, Tensor};
use tinytrain::zoo;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("tinytrain-surgery-demo");
    std::fs::create_dir_all(&dir)?;

    // An audio backbone as shipped: feature stack plus 3 prediction layers.
    let full = zoo::yamnet_shaped(21, 8);
    println!(
        "full graph: {} nodes, {:?} -> {:?}",
        full.nodes.len(),
        full.input_shape,
        full.validate()?
    );

    // Drop the prediction layers to expose the feature extractor.
    let backbone = full.truncate(3)?;
    println!(
        "after truncate(3): {} nodes -> {:?} features",
        backbone.nodes.len(),
        backbone.validate()?
    );

    // Byte-exact round trip through disk.
    let path = dir.join("backbone.ttml");
    let written = backbone.save(&path)?;
    let reloaded = ModelGraph::load(&path)?;
    assert_eq!(reloaded, backbone);
    println!("saved {written} bytes and reloaded identically");

    // A small hand-built classifier head over the (3, 2, 1024) features.
    let mut head = ModelGraph::new("demo-head", vec![3, 2, 1024]);
    head.weights.insert(
        "dense.w".into(),
        Tensor::filled(vec![1024, 3], 0.01)?,
    );
    head.weights.insert("dense.b".into(), Tensor::zeros(vec![3]));
    head.nodes.push(GraphNode::new("gap", NodeOp::GlobalAveragePool, vec![], vec![]));
    head.nodes.push(GraphNode::new(
        "dense",
        NodeOp::Dense,
        vec!["gap".into()],
        vec!["dense.w".into(), "dense.b".into()],
    ));
    head.nodes.push(GraphNode::new(
        "out",
        NodeOp::Activation {
            kind: ActivationKind::Softmax,
        },
        vec!["dense".into()],
        vec![],
    ));
    head.set_classes(&["alpha".into(), "beta".into(), "gamma".into()]);

    let packaged = compose(&backbone, &head)?;
    println!(
        "composed '{}': {} nodes, classes {:?}",
        packaged.name,
        packaged.nodes.len(),
        packaged.classes().unwrap()
    );

    // The manifest section is ordinary text; `tinytrain inspect` prints the
    // same thing.
    let manifest = packaged.manifest();
    println!("\nmanifest head:");
    for line in manifest.lines().take(6) {
        println!("  {line}");
    }
    println!("  ... ({} lines total)", manifest.lines().count());
    Ok(())
}

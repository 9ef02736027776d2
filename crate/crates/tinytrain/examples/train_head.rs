//! Train a classification head (global average pooling + dropout + dense
//! softmax) on cached features with from-scratch backprop, then export it as
//! a composable graph.
//!
//! ```bash
//! cargo run --release --example train_head
//! ```

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tinytrain::features::FeatureCache;
use tinytrain::tensor::Tensor;
use tinytrain::trainer::{export_head, train, HeadSpec, TrainConfig};

/// Synthetic (n, 7, 7, 80) feature cache: two classes separated along a
/// fixed random direction in pooled-feature space.
fn blob_cache(n_per_class: usize, noise_seed: u64) -> FeatureCache {
    const CHANNELS: usize = 80;
    let mut dir_rng = ChaCha8Rng::seed_from_u64(1);
    let direction: Vec<f32> = (0..CHANNELS).map(|_| dir_rng.random_range(-1.0..1.0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let n = 2 * n_per_class;
    let mut features = Vec::with_capacity(n * 49 * CHANNELS);
    let mut labels = vec![0.0f32; n * 2];
    for row in 0..n {
        let class = row % 2;
        let sign = if class == 0 { -0.15f32 } else { 0.15 };
        for _ in 0..49 {
            for direction_c in &direction {
                features.push(sign * direction_c + rng.random_range(-1.0..1.0));
            }
        }
        labels[row * 2 + class] = 1.0;
    }
    FeatureCache {
        features: Tensor::from_f32(vec![n, 7, 7, CHANNELS], features).unwrap(),
        labels: Tensor::from_f32(vec![n, 2], labels).unwrap(),
        class_names: vec!["negative".into(), "positive".into()],
        backbone_fingerprint: "demo".into(),
        preprocessing_id: "synthetic-blobs".into(),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let train_cache = blob_cache(40, 2);
    let val_cache = blob_cache(10, 3);

    let cfg = TrainConfig {
        epochs: 25,
        seed: 7,
        ..TrainConfig::default()
    };
    let (head, history) = train(&train_cache, &val_cache, HeadSpec::image(0.5), &cfg)?;

    println!("epoch  train_loss  train_acc  val_loss  val_acc");
    for (i, e) in history.epochs.iter().enumerate() {
        if i % 4 == 0 || i + 1 == history.epochs.len() {
            println!(
                "{:>5}  {:>10.4}  {:>9.3}  {:>8.4}  {:>7.3}",
                i + 1,
                e.train_loss,
                e.train_acc,
                e.val_loss,
                e.val_acc
            );
        }
    }

    // The head exports as an ordinary graph, ready for compose().
    let graph = export_head(&head, "demo-head");
    let shape = graph.validate()?;
    println!(
        "\nexported head: {} nodes, input {:?} -> output {:?}",
        graph.nodes.len(),
        graph.input_shape,
        shape
    );
    println!("history CSV starts:\n{}", &history.to_csv()[..120]);
    Ok(())
}

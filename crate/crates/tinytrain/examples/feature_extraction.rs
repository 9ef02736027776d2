//! Frozen-backbone feature extraction with the on-disk cache: stream
//! samples through a backbone in batches of 32, persist the `.ttfc` file,
//! and watch stale-cache detection reject a swapped backbone.
//!
//! ```bash
//! cargo run --release --example feature_extraction
//! ```

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tinytrain::features::{
    batch_plan, extract_features, fingerprint_bytes, load_cache, save_cache, CacheMeta, Sample,
};
use tinytrain::tensor::Tensor;
use tinytrain::zoo;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("tinytrain-features-demo");
    std::fs::create_dir_all(&dir)?;

    // Audio-shaped backbone with the prediction layers stripped.
    let backbone = zoo::yamnet_shaped(3, 8).truncate(3)?;
    let fingerprint = fingerprint_bytes(&backbone.to_bytes());
    println!("backbone fingerprint: {fingerprint}");

    // 100 fake log-mel patches, labels alternating over three classes.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<Sample> = (0..100)
        .map(|i| Sample {
            input: Tensor::from_f32(
                vec![96, 64, 1],
                (0..96 * 64).map(|_| rng.random_range(-4.0..1.0)).collect(),
            )
            .unwrap(),
            class_index: i % 3,
            group: i,
        })
        .collect();

    println!("batch plan for 100 samples: {:?}", batch_plan(100, 32));
    let cache = extract_features(
        &backbone,
        samples.into_iter().map(Ok),
        100,
        32,
        CacheMeta {
            class_names: vec!["a".into(), "b".into(), "c".into()],
            backbone_fingerprint: fingerprint.clone(),
            preprocessing_id: "demo-patches".into(),
        },
    )?;
    println!(
        "features {:?}, one-hot labels {:?}",
        cache.features.shape(),
        cache.labels.shape()
    );

    let path = dir.join("features.ttfc");
    let bytes = save_cache(&cache, &path)?;
    println!("cached {} bytes -> {}", bytes, path.display());

    let reloaded = load_cache(&path, Some(&fingerprint))?;
    assert_eq!(reloaded, cache);
    println!("reload with matching fingerprint: ok");

    match load_cache(&path, Some("0000000000000000")) {
        Err(e) => println!("reload with wrong fingerprint: {e}"),
        Ok(_) => unreachable!("stale cache must be rejected"),
    }
    Ok(())
}

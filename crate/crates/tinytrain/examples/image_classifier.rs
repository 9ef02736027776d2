//! End-to-end image classifier: synthesize a tiny labeled dataset, run the
//! full pipeline (ingest -> extract -> train -> compose -> quantize ->
//! package), then classify an image with the packaged model.
//!
//! ```bash
//! cargo run --release --example image_classifier
//! ```

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tinytrain::image::{encode_ppm, RasterImage};
use tinytrain::pipeline::{create, predict_file};
use tinytrain::{zoo, RunConfig, TaskKind};

/// Reddish-striped or bluish-checked noise image; the two classes differ in
/// both color statistics and texture.
fn synthetic_image(class: usize, seed: u64, width: usize, height: usize) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let texture = match class {
                0 => ((y / 4) % 2) as i16 * 60,
                _ => (((x / 4) + (y / 4)) % 2) as i16 * 60,
            };
            let noise: i16 = rng.random_range(-25..=25);
            let base: [i16; 3] = if class == 0 { [190, 60, 60] } else { [60, 60, 190] };
            for channel in base {
                pixels.push((channel + texture + noise).clamp(0, 255) as u8);
            }
        }
    }
    RasterImage::new(width, height, pixels).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join("tinytrain-image-demo");
    std::fs::remove_dir_all(&root).ok();

    // 1. A dataset directory: root/{train,val}/<class>/<files>.
    println!("writing synthetic dataset under {}", root.display());
    for (class_idx, class) in ["stripes", "checks"].iter().enumerate() {
        for (split, count) in [("train", 40), ("val", 10)] {
            let dir = root.join("data").join(split).join(class);
            std::fs::create_dir_all(&dir)?;
            for i in 0..count {
                let seed = (class_idx as u64) << 32 | (i as u64) << 1 | u64::from(split == "val");
                let mut size_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
                let w = size_rng.random_range(40..90);
                let h = size_rng.random_range(40..90);
                let img = synthetic_image(class_idx, seed, w, h);
                std::fs::write(dir.join(format!("{i:03}.ppm")), encode_ppm(&img))?;
            }
        }
    }

    // 2. A frozen backbone. Randomly initialized here; import pretrained
    //    weights for real tasks.
    let backbone_path = root.join("mobilenet-demo.ttml");
    zoo::mobilenet_v2_shaped(7, 4).save(&backbone_path)?;
    println!("wrote demo backbone {}", backbone_path.display());

    // 3. One call runs the whole pipeline.
    let mut cfg = RunConfig {
        task: TaskKind::Image,
        data_dir: root.join("data"),
        backbone: backbone_path,
        out_dir: root.join("out"),
        seed: 42,
        ..RunConfig::default()
    };
    cfg.train.epochs = 60;
    cfg.train.learning_rate = 0.01;
    let outcome = create(&cfg)?;

    let last = outcome.history.epochs.last().unwrap();
    println!("\npackaged model: {}", outcome.model_path.display());
    println!(
        "final epoch: train acc {:.1}%, val acc {:.1}%",
        last.train_acc * 100.0,
        last.val_acc * 100.0
    );
    println!(
        "validation accuracy of the packaged (quantized) model: {:.1}%",
        outcome.report.accuracy() * 100.0
    );
    if let Some(size) = outcome.size_report {
        println!(
            "quantization: {} -> {} bytes ({:.1}% smaller)",
            size.before_bytes,
            size.after_bytes,
            size.reduction() * 100.0
        );
    }
    println!("reports: {}", cfg.out_dir.display());

    // 4. The model file is self-describing; prediction needs only paths.
    let sample = root.join("data/val/stripes/000.ppm");
    let prediction = predict_file(&outcome.model_path, &sample)?;
    println!("\npredictions for {}:", sample.display());
    for (label, prob) in prediction.ranked() {
        println!("  {label}: {prob:.4}");
    }
    Ok(())
}

//! End-to-end audio classifier: synthesize tone/noise WAV files, strip the
//! prediction layers off an audio backbone, train on log-mel patches, and
//! classify clips with per-clip probability averaging.
//!
//! ```bash
//! cargo run --release --example audio_classifier
//! ```

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tinytrain::audio::{encode_wav_pcm16, AudioClip};
use tinytrain::pipeline::{create, predict_file};
use tinytrain::{zoo, RunConfig, TaskKind};

/// Sine, square, or white-noise clip with a random base frequency. Written
/// at 22.05 kHz so the pipeline's resampler has real work to do.
fn synthetic_clip(class: usize, seed: u64, secs: f64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = 22_050u32;
    let n = (secs * f64::from(rate)).round() as usize;
    let freq: f64 = rng.random_range(220.0..880.0);
    let amp: f32 = rng.random_range(0.4..0.8);
    let samples = (0..n)
        .map(|i| {
            let phase = 2.0 * std::f64::consts::PI * freq * i as f64 / f64::from(rate);
            match class {
                0 => amp * phase.sin() as f32,
                1 => amp * if phase.sin() >= 0.0 { 1.0 } else { -1.0 },
                _ => rng.random_range(-amp..amp),
            }
        })
        .collect();
    AudioClip {
        samples,
        sample_rate: rate,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join("tinytrain-audio-demo");
    std::fs::remove_dir_all(&root).ok();

    println!("writing synthetic clips under {}", root.display());
    for (class_idx, class) in ["sine", "square", "noise"].iter().enumerate() {
        for (split, count) in [("train", 10), ("val", 4)] {
            let dir = root.join("data").join(split).join(class);
            std::fs::create_dir_all(&dir)?;
            for i in 0..count {
                let seed = (class_idx as u64) << 32 | (i as u64) << 1 | u64::from(split == "val");
                let clip = synthetic_clip(class_idx, seed, 2.0);
                std::fs::write(dir.join(format!("{i:03}.wav")), encode_wav_pcm16(&clip))?;
            }
        }
    }

    // The demo backbone still carries its three prediction layers
    // (pooling, dense, sigmoid); `drop_last: 3` strips them during create,
    // leaving the (3, 2, 1024) feature extractor.
    let backbone_path = root.join("yamnet-demo.ttml");
    zoo::yamnet_shaped(9, 4).save(&backbone_path)?;
    println!("wrote demo backbone {}", backbone_path.display());

    let mut cfg = RunConfig {
        task: TaskKind::Audio,
        data_dir: root.join("data"),
        backbone: backbone_path,
        out_dir: root.join("out"),
        drop_last: 3,
        seed: 42,
        ..RunConfig::default()
    };
    cfg.train.epochs = 50;
    cfg.train.learning_rate = 0.01;
    let outcome = create(&cfg)?;

    println!("\npackaged model: {}", outcome.model_path.display());
    println!(
        "per-clip validation accuracy: {:.1}% over {} clips",
        outcome.report.accuracy() * 100.0,
        outcome.report.sample_count
    );
    if let Some(size) = outcome.size_report {
        println!("model size reduction: {:.1}%", size.reduction() * 100.0);
    }

    // Per-clip prediction: every 96x64 patch is scored and the
    // probabilities are averaged before the argmax.
    let sample = root.join("data/val/square/001.wav");
    let prediction = predict_file(&outcome.model_path, &sample)?;
    println!("\npredictions for {}:", sample.display());
    for (label, prob) in prediction.ranked() {
        println!("  {label}: {prob:.4}");
    }
    Ok(())
}

//! Post-training symmetric int8 weight quantization: shrink a
//! weight-dominated model by roughly 74% and measure how rarely the
//! quantized model's top-1 prediction moves.
//!
//! ```bash
//! cargo run --release --example quantize_model
//! ```

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tinytrain::engine::{argmax, ExecutionPlan};
use tinytrain::quant::{quantize_model, size_report};
use tinytrain::tensor::Tensor;
use tinytrain::zoo;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("tinytrain-quantize-demo");
    std::fs::create_dir_all(&dir)?;

    // ~1M float32 weights across two dense layers.
    let model = zoo::dense_classifier(11, 1024, 976, 10);
    let weight_count: usize = model.weights.values().map(Tensor::len).sum();
    println!("model has {weight_count} weights");

    let float_path = dir.join("model.f32.ttml");
    let quant_path = dir.join("model.int8.ttml");
    model.save(&float_path)?;
    let quantized = quantize_model(&model)?;
    quantized.save(&quant_path)?;

    let report = size_report(&float_path, &quant_path)?;
    println!("\n{report}\n");

    // Weights dequantize as scale * q at plan build; inference stays float.
    let float_plan = ExecutionPlan::new(&model)?;
    let quant_plan = ExecutionPlan::new(&quantized)?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut agree = 0;
    const TRIALS: usize = 100;
    for _ in 0..TRIALS {
        let input = Tensor::from_f32(
            vec![1, 1, 1, 1024],
            (0..1024).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )?;
        let float_top = argmax(float_plan.run(&input)?.as_f32()?);
        let quant_top = argmax(quant_plan.run(&input)?.as_f32()?);
        if float_top == quant_top {
            agree += 1;
        }
    }
    println!("top-1 agreement on {TRIALS} random inputs: {agree}/{TRIALS}");
    println!("files: {} / {}", float_path.display(), quant_path.display());
    Ok(())
}

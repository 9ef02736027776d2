//! Shared test support: independent oracles (naive loops, brute-force DFT,
//! finite differences) and synthetic dataset generators.
//!
//! Oracles are written directly from the mathematical definitions and stay
//! independent of the library's implementation paths.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use tinytrain::tensor::{Padding, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f32) -> Tensor {
    let len = shape.iter().product();
    let data: Vec<f32> = (0..len).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_f32(shape, data).unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
    assert_eq!(a.shape(), b.shape(), "oracle shape disagrees");
    a.as_f32()
        .unwrap()
        .iter()
        .zip(b.as_f32().unwrap())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

/// Output size and leading pad for one axis, written from the padding
/// definition: same -> ceil(n/stride) with total pad
/// max((out-1)*stride + k - n, 0) split low/high; valid -> floor((n-k)/s)+1.
fn axis(n: usize, k: usize, stride: usize, padding: Padding) -> (usize, isize) {
    match padding {
        Padding::Same => {
            let out = n.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(n);
            (out, (total / 2) as isize)
        }
        Padding::Valid => ((n - k) / stride + 1, 0),
    }
}

/// Six-nested-loop direct convolution.
pub fn naive_conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: Padding,
) -> Tensor {
    let x = input.as_f32().unwrap();
    let w = kernel.as_f32().unwrap();
    let b = bias.as_f32().unwrap();
    let (n, ih, iw, ic) = match *input.shape() {
        [n, h, w2, c] => (n, h, w2, c),
        _ => panic!("rank 4 input"),
    };
    let (kh, kw, _kic, oc) = match *kernel.shape() {
        [a, b2, c, d] => (a, b2, c, d),
        _ => panic!("rank 4 kernel"),
    };
    let (oh, pad_y) = axis(ih, kh, stride, padding);
    let (ow, pad_x) = axis(iw, kw, stride, padding);
    let mut out = vec![0.0f32; n * oh * ow * oc];
    for bn in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..oc {
                    let mut acc = f64::from(b[o]);
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = oy as isize * stride as isize + ky as isize - pad_y;
                            let ix = ox as isize * stride as isize + kx as isize - pad_x;
                            if iy < 0 || iy >= ih as isize || ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            for c in 0..ic {
                                let xv = x[((bn * ih + iy as usize) * iw + ix as usize) * ic + c];
                                let wv = w[((ky * kw + kx) * ic + c) * oc + o];
                                acc += f64::from(xv) * f64::from(wv);
                            }
                        }
                    }
                    out[((bn * oh + oy) * ow + ox) * oc + o] = acc as f32;
                }
            }
        }
    }
    Tensor::from_f32(vec![n, oh, ow, oc], out).unwrap()
}

/// Per-channel direct depthwise convolution.
pub fn naive_depthwise(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: Padding,
) -> Tensor {
    let x = input.as_f32().unwrap();
    let w = kernel.as_f32().unwrap();
    let b = bias.as_f32().unwrap();
    let (n, ih, iw, c) = match *input.shape() {
        [n, h, w2, c] => (n, h, w2, c),
        _ => panic!("rank 4 input"),
    };
    let (kh, kw) = (kernel.shape()[0], kernel.shape()[1]);
    let (oh, pad_y) = axis(ih, kh, stride, padding);
    let (ow, pad_x) = axis(iw, kw, stride, padding);
    let mut out = vec![0.0f32; n * oh * ow * c];
    for bn in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut acc = f64::from(b[ch]);
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = oy as isize * stride as isize + ky as isize - pad_y;
                            let ix = ox as isize * stride as isize + kx as isize - pad_x;
                            if iy < 0 || iy >= ih as isize || ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            let xv = x[((bn * ih + iy as usize) * iw + ix as usize) * c + ch];
                            acc += f64::from(xv) * f64::from(w[(ky * kw + kx) * c + ch]);
                        }
                    }
                    out[((bn * oh + oy) * ow + ox) * c + ch] = acc as f32;
                }
            }
        }
    }
    Tensor::from_f32(vec![n, oh, ow, c], out).unwrap()
}

/// Triple-loop matrix product plus bias.
pub fn naive_dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Tensor {
    let x = input.as_f32().unwrap();
    let w = weights.as_f32().unwrap();
    let b = bias.as_f32().unwrap();
    let (n, f) = (input.shape()[0], input.shape()[1]);
    let k = weights.shape()[1];
    let mut out = vec![0.0f32; n * k];
    for row in 0..n {
        for col in 0..k {
            let mut acc = f64::from(b[col]);
            for i in 0..f {
                acc += f64::from(x[row * f + i]) * f64::from(w[i * k + col]);
            }
            out[row * k + col] = acc as f32;
        }
    }
    Tensor::from_f32(vec![n, k], out).unwrap()
}

/// O(N^2) DFT magnitude of one frame (real input), bins `0..=n/2`.
pub fn brute_dft_magnitude(signal: &[f64], fft_size: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(fft_size / 2 + 1);
    for k in 0..=fft_size / 2 {
        let mut re = 0.0f64;
        let mut im = 0.0f64;
        for (n, &x) in signal.iter().enumerate() {
            let angle = -2.0 * std::f64::consts::PI * k as f64 * n as f64 / fft_size as f64;
            re += x * angle.cos();
            im += x * angle.sin();
        }
        out.push((re * re + im * im).sqrt());
    }
    out
}

/// Periodic Hann window, matching the front-end definition.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

// ---------------------------------------------------------------------------
// Synthetic datasets
// ---------------------------------------------------------------------------

use tinytrain::audio::{encode_wav_pcm16, AudioClip};
use tinytrain::image::{encode_ppm, RasterImage};

/// Procedural image with class-specific color and texture statistics:
/// class 0 is reddish with horizontal stripes, class 1 bluish with a
/// checkerboard, class 2 greenish with vertical stripes.
pub fn synthetic_image(class: usize, seed: u64, width: usize, height: usize) -> RasterImage {
    let mut rng = rng(seed ^ 0x517e);
    let mut pixels = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let texture = match class {
                0 => ((y / 4) % 2) as u8 * 60,
                1 => (((x / 4) + (y / 4)) % 2) as u8 * 60,
                _ => ((x / 4) % 2) as u8 * 60,
            };
            let noise: i16 = rng.random_range(-25..=25);
            let base: [i16; 3] = match class {
                0 => [190, 60, 60],
                1 => [60, 60, 190],
                _ => [60, 190, 60],
            };
            for channel in base {
                let v = channel + i16::from(texture) + noise;
                pixels.push(v.clamp(0, 255) as u8);
            }
        }
    }
    RasterImage::new(width, height, pixels).unwrap()
}

/// Write a `root/{train,val}/<class>/` PPM dataset; returns the class names.
pub fn write_image_dataset(
    root: &Path,
    classes: &[&str],
    train_per_class: usize,
    val_per_class: usize,
) -> Vec<String> {
    for (class_idx, class) in classes.iter().enumerate() {
        for (split, count, salt) in [("train", train_per_class, 0u64), ("val", val_per_class, 1)] {
            let dir = root.join(split).join(class);
            std::fs::create_dir_all(&dir).unwrap();
            for i in 0..count {
                let seed = (class_idx as u64) << 32 | (i as u64) << 2 | salt;
                let mut size_rng = rng(seed ^ 0xabcd);
                let w = size_rng.random_range(40..90);
                let h = size_rng.random_range(40..90);
                let img = synthetic_image(class_idx, seed, w, h);
                std::fs::write(dir.join(format!("{i:03}.ppm")), encode_ppm(&img)).unwrap();
            }
        }
    }
    classes.iter().map(ToString::to_string).collect()
}

/// Tone/noise clip for class: 0 = sine, 1 = square, 2 = white noise.
pub fn synthetic_clip(class: usize, seed: u64, secs: f64, rate: u32) -> AudioClip {
    let mut rng = rng(seed ^ 0xa0d10);
    let n = (secs * f64::from(rate)).round() as usize;
    let freq: f64 = rng.random_range(220.0..880.0);
    let amp: f32 = rng.random_range(0.4..0.8);
    let samples: Vec<f32> = (0..n)
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

/// Write a `root/{train,val}/<class>/` WAV dataset (22.05 kHz source rate so
/// the resampler runs in-pipeline); returns the class names.
pub fn write_audio_dataset(
    root: &Path,
    classes: &[&str],
    train_per_class: usize,
    val_per_class: usize,
    secs: f64,
) -> Vec<String> {
    for (class_idx, class) in classes.iter().enumerate() {
        for (split, count, salt) in [("train", train_per_class, 0u64), ("val", val_per_class, 1)] {
            let dir = root.join(split).join(class);
            std::fs::create_dir_all(&dir).unwrap();
            for i in 0..count {
                let seed = (class_idx as u64) << 32 | (i as u64) << 2 | salt;
                let clip = synthetic_clip(class_idx, seed, secs, 22_050);
                std::fs::write(dir.join(format!("{i:03}.wav")), encode_wav_pcm16(&clip)).unwrap();
            }
        }
    }
    classes.iter().map(ToString::to_string).collect()
}

/// Fresh temp directory for one test; caller removes it.
pub fn temp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "tinytrain-test-{tag}-{}-{:x}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos() as u64
    ));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

//! The audio front-end step by step: WAV decode, band-limited resampling to
//! 16 kHz, silence trimming, STFT magnitudes, the 64-band mel projection,
//! log compression, and 50%-overlapping 96x64 patches.
//!
//! ```bash
//! cargo run --release --example audio_frontend [clip.wav]
//! ```

use tinytrain::audio::{
    decode_wav, encode_wav_pcm16, frame_patches, log_mel, mel_filterbank, resample, sine_clip,
    stft_magnitude, trim_silence, AudioClip, DEFAULT_SILENCE_RMS, TARGET_SAMPLE_RATE,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Use a file if one is given, otherwise synthesize a 440 Hz tone with a
    // stretch of leading silence at 44.1 kHz.
    let clip: AudioClip = match std::env::args().nth(1) {
        Some(path) => {
            println!("decoding {path}");
            decode_wav(&std::fs::read(path)?)?
        }
        None => {
            let tone = sine_clip(440.0, 0.6, 1.5, 44_100);
            let mut samples = vec![0.0f32; 22_050];
            samples.extend(tone.samples);
            let clip = AudioClip {
                samples,
                sample_rate: 44_100,
            };
            // Round-trip through the encoder so the demo exercises decode too.
            decode_wav(&encode_wav_pcm16(&clip))?
        }
    };
    println!(
        "input: {} samples at {} Hz ({:.2} s)",
        clip.samples.len(),
        clip.sample_rate,
        clip.duration_secs()
    );

    let resampled = resample(&clip, TARGET_SAMPLE_RATE);
    println!(
        "resampled: {} samples at {} Hz",
        resampled.samples.len(),
        resampled.sample_rate
    );

    let trimmed = trim_silence(&resampled, DEFAULT_SILENCE_RMS, 0.025)?;
    println!(
        "after silence trim (RMS >= {DEFAULT_SILENCE_RMS}): {:.2} s",
        trimmed.duration_secs()
    );

    let magnitudes = stft_magnitude(&trimmed)?;
    println!("STFT magnitudes: {:?} (25 ms window, 10 ms hop)", magnitudes.shape());

    let mel = mel_filterbank(&magnitudes)?;
    println!("mel spectrogram: {:?} (64 bands over 125-7500 Hz)", mel.shape());

    let logmel = log_mel(&mel);
    let first_frame = &logmel.as_f32()?[..8];
    println!("log-mel, first frame head: {first_frame:.3?}");

    let patches = frame_patches(&logmel)?;
    println!(
        "patches: {:?} (96 frames per patch, hop 48 = 50% overlap)",
        patches.shape()
    );

    // Which mel band is hottest in the first patch? For the synthetic tone
    // this sits at the band whose center is nearest 440 Hz.
    let data = patches.as_f32()?;
    let mut band_energy = vec![0.0f64; 64];
    for frame in 0..96 {
        for band in 0..64 {
            band_energy[band] += f64::from(data[frame * 64 + band]);
        }
    }
    let peak = band_energy
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    println!("hottest mel band in patch 0: {peak}");
    Ok(())
}

//! Audio decoding and the log-mel front-end.
//!
//! WAV input is decoded to mono float samples in `[-1, 1]`, band-limited
//! resampled to 16 kHz, optionally silence-trimmed, and converted to
//! overlapping 96x64 log-mel patches:
//!
//! * STFT magnitudes with a 25 ms periodic Hann window and 10 ms hop,
//!   zero-padded to a 512-point FFT (257 bins),
//! * 64 triangular mel filters (HTK scale) covering 125-7500 Hz,
//! * `ln(mel + 0.001)`, and
//! * 96-frame patches with 50% overlap (hop 48), short inputs padded with
//!   `ln(0.001)`.
//!
//! Every step is a pure function of its input, so clips can be processed in
//! parallel and the same bytes always produce bit-identical patches.

use crate::tensor::Tensor;
use std::f64::consts::PI;
use std::fmt;

/// Sample rate every clip is converted to before analysis.
pub const TARGET_SAMPLE_RATE: u32 = 16_000;
/// Analysis window: 25 ms at 16 kHz.
pub const WINDOW_SIZE: usize = 400;
/// Window hop: 10 ms at 16 kHz.
pub const HOP_SIZE: usize = 160;
/// FFT length (next power of two >= the window).
pub const FFT_SIZE: usize = 512;
/// Spectrum bins kept per frame: `FFT_SIZE / 2 + 1`.
pub const N_BINS: usize = FFT_SIZE / 2 + 1;
pub const N_MELS: usize = 64;
pub const MEL_FMIN_HZ: f64 = 125.0;
pub const MEL_FMAX_HZ: f64 = 7_500.0;
/// Frames per patch (0.96 s).
pub const PATCH_FRAMES: usize = 96;
/// Patch hop: 50% overlap.
pub const PATCH_HOP: usize = 48;
/// Offset inside the log so silence stays finite: `ln(mel + 0.001)`.
pub const LOG_OFFSET: f32 = 1e-3;
/// Default RMS threshold for silence trimming (about -40 dBFS).
pub const DEFAULT_SILENCE_RMS: f32 = 0.01;

/// Preprocessing identity recorded in model metadata and feature caches.
pub const PREPROCESSING_ID: &str = "audio-logmel-v1";

#[derive(Debug)]
pub enum AudioError {
    /// Malformed RIFF/WAVE byte stream.
    DecodeError(String),
    /// Well-formed WAV with an encoding this crate does not read.
    UnsupportedEncoding(String),
    /// Silence trimming removed every frame.
    EmptyAfterTrim,
    /// Clip shorter than one analysis window.
    TooShort { samples: usize, needed: usize },
    /// An analysis step was handed a clip at the wrong rate.
    WrongSampleRate { got: u32, expected: u32 },
}

impl fmt::Display for AudioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AudioError::DecodeError(detail) => write!(f, "wav decode error: {detail}"),
            AudioError::UnsupportedEncoding(detail) => {
                write!(f, "unsupported wav encoding: {detail}")
            }
            AudioError::EmptyAfterTrim => write!(f, "no audio left after silence trimming"),
            AudioError::TooShort { samples, needed } => {
                write!(f, "clip too short: {samples} samples, need at least {needed}")
            }
            AudioError::WrongSampleRate { got, expected } => {
                write!(f, "expected {expected} Hz input, got {got} Hz")
            }
        }
    }
}

impl std::error::Error for AudioError {}

/// Decoded mono audio: finite float samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

fn read_u16(bytes: &[u8], at: usize) -> Option<u16> {
    bytes.get(at..at + 2).map(|b| u16::from_le_bytes(b.try_into().unwrap()))
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
}

/// Decode a RIFF/WAVE byte stream. PCM16 and float32, mono or stereo;
/// stereo frames are averaged down to mono.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    let bad = |d: &str| AudioError::DecodeError(d.to_string());
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE stream"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // tag, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut pos = 12usize;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4).ok_or_else(|| bad("torn chunk header"))? as usize;
        let body = bytes
            .get(pos + 8..pos + 8 + size)
            .ok_or_else(|| bad("chunk extends past end of file"))?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(bad("fmt chunk too small"));
                }
                fmt = Some((
                    read_u16(body, 0).unwrap(),
                    read_u16(body, 2).unwrap(),
                    read_u32(body, 4).unwrap(),
                    read_u16(body, 14).unwrap(),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned.
        pos += 8 + size + (size & 1);
    }

    let (tag, channels, rate, bits) = fmt.ok_or_else(|| bad("missing fmt chunk"))?;
    let data = data.ok_or_else(|| bad("missing data chunk"))?;
    if rate == 0 {
        return Err(bad("zero sample rate"));
    }
    if !(1..=2).contains(&channels) {
        return Err(AudioError::UnsupportedEncoding(format!(
            "{channels} channels (only mono/stereo supported)"
        )));
    }
    let ch = channels as usize;

    let interleaved: Vec<f32> = match (tag, bits) {
        (1, 16) => data
            .chunks_exact(2)
            .map(|b| f32::from(i16::from_le_bytes(b.try_into().unwrap())) / 32768.0)
            .collect(),
        (3, 32) => data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()).clamp(-1.0, 1.0))
            .collect(),
        _ => {
            return Err(AudioError::UnsupportedEncoding(format!(
                "format tag {tag} with {bits} bits per sample"
            )))
        }
    };
    if !interleaved.iter().all(|v| v.is_finite()) {
        return Err(bad("non-finite sample values"));
    }

    let samples = if ch == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|f| (f[0] + f[1]) / 2.0)
            .collect()
    };
    Ok(AudioClip {
        samples,
        sample_rate: rate,
    })
}

/// Encode a clip as PCM16 mono WAV; the inverse of [`decode_wav`] up to
/// 16-bit rounding.
pub fn encode_wav_pcm16(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let v = (f64::from(s.clamp(-1.0, 1.0)) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited sample-rate conversion with a Blackman-windowed sinc kernel.
///
/// The cutoff sits just below the lower Nyquist frequency and the kernel is
/// sized so the passband stays flat (within 1%) up to ~94% of Nyquist —
/// comfortably past the 7.5 kHz the mel filterbank uses at 16 kHz. Kernel
/// weights are renormalized per output sample, which pins DC gain to exactly
/// 1 and keeps edge effects local.
pub fn resample(clip: &AudioClip, target_rate: u32) -> AudioClip {
    let src_rate = clip.sample_rate;
    if src_rate == target_rate || clip.samples.is_empty() {
        return AudioClip {
            samples: clip.samples.clone(),
            sample_rate: target_rate,
        };
    }
    let src = f64::from(src_rate);
    let dst = f64::from(target_rate);
    let out_len = ((clip.samples.len() as f64) * dst / src).round() as usize;

    let cutoff_hz = 0.9875 * 0.5 * src.min(dst);
    let fc = cutoff_hz / src; // cycles per source sample
    // Half-width so the Blackman transition band stays inside the top ~9%
    // of the passband.
    let half_width = ((33.2 * src / cutoff_hz).ceil() as usize).max(16);

    let mut out = Vec::with_capacity(out_len);
    let step = src / dst;
    for i in 0..out_len {
        let center = i as f64 * step;
        let lo = ((center - half_width as f64).ceil() as isize).max(0) as usize;
        let hi = ((center + half_width as f64).floor() as usize).min(clip.samples.len() - 1);
        let mut acc = 0.0f64;
        let mut norm = 0.0f64;
        for j in lo..=hi {
            let u = j as f64 - center;
            let t = u / half_width as f64;
            let window = 0.42 + 0.5 * (PI * t).cos() + 0.08 * (2.0 * PI * t).cos();
            let w = 2.0 * fc * sinc(2.0 * fc * u) * window;
            acc += w * f64::from(clip.samples[j]);
            norm += w;
        }
        out.push(if norm.abs() > 1e-12 { (acc / norm) as f32 } else { 0.0 });
    }
    AudioClip {
        samples: out,
        sample_rate: target_rate,
    }
}

/// Drop 25 ms frames whose RMS falls below `threshold_rms`, keeping the
/// survivors in order. The trailing partial frame is judged on its own
/// length.
pub fn trim_silence(
    clip: &AudioClip,
    threshold_rms: f32,
    frame_secs: f64,
) -> Result<AudioClip, AudioError> {
    let frame_len = ((f64::from(clip.sample_rate) * frame_secs).round() as usize).max(1);
    let mut kept = Vec::with_capacity(clip.samples.len());
    for frame in clip.samples.chunks(frame_len) {
        let energy: f64 = frame.iter().map(|&s| f64::from(s) * f64::from(s)).sum();
        let rms = (energy / frame.len() as f64).sqrt();
        if rms >= f64::from(threshold_rms) {
            kept.extend_from_slice(frame);
        }
    }
    if kept.is_empty() {
        return Err(AudioError::EmptyAfterTrim);
    }
    Ok(AudioClip {
        samples: kept,
        sample_rate: clip.sample_rate,
    })
}

/// In-place iterative radix-2 FFT (decimation in time); `re.len()` must be a
/// power of two.
fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two() && im.len() == n);
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        let (step_cos, step_sin) = (ang.cos(), ang.sin());
        for start in (0..n).step_by(len) {
            let mut wr = 1.0f64;
            let mut wi = 0.0f64;
            for k in 0..len / 2 {
                let (ur, ui) = (re[start + k], im[start + k]);
                let (xr, xi) = (re[start + k + len / 2], im[start + k + len / 2]);
                let vr = xr * wr - xi * wi;
                let vi = xr * wi + xi * wr;
                re[start + k] = ur + vr;
                im[start + k] = ui + vi;
                re[start + k + len / 2] = ur - vr;
                im[start + k + len / 2] = ui - vi;
                let next_wr = wr * step_cos - wi * step_sin;
                wi = wr * step_sin + wi * step_cos;
                wr = next_wr;
            }
        }
        len <<= 1;
    }
}

/// Periodic Hann window of [`WINDOW_SIZE`] samples.
fn hann_window() -> Vec<f64> {
    (0..WINDOW_SIZE)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / WINDOW_SIZE as f64).cos())
        .collect()
}

/// STFT magnitudes: `(frames, 257)` with frame count
/// `1 + (len - 400) / 160`. The clip must already be at 16 kHz.
pub fn stft_magnitude(clip: &AudioClip) -> Result<Tensor, AudioError> {
    if clip.sample_rate != TARGET_SAMPLE_RATE {
        return Err(AudioError::WrongSampleRate {
            got: clip.sample_rate,
            expected: TARGET_SAMPLE_RATE,
        });
    }
    let len = clip.samples.len();
    if len < WINDOW_SIZE {
        return Err(AudioError::TooShort {
            samples: len,
            needed: WINDOW_SIZE,
        });
    }
    let frames = 1 + (len - WINDOW_SIZE) / HOP_SIZE;
    let window = hann_window();
    let mut out = Vec::with_capacity(frames * N_BINS);
    let mut re = vec![0.0f64; FFT_SIZE];
    let mut im = vec![0.0f64; FFT_SIZE];
    for f in 0..frames {
        let start = f * HOP_SIZE;
        for n in 0..WINDOW_SIZE {
            re[n] = f64::from(clip.samples[start + n]) * window[n];
        }
        re[WINDOW_SIZE..].fill(0.0);
        im.fill(0.0);
        fft_in_place(&mut re, &mut im);
        for k in 0..N_BINS {
            out.push((re[k] * re[k] + im[k] * im[k]).sqrt() as f32);
        }
    }
    Ok(Tensor::from_f32(vec![frames, N_BINS], out).expect("magnitudes are finite"))
}

/// HTK mel scale: `2595 * log10(1 + hz / 700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

/// Inverse of [`hz_to_mel`].
pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filter weights, `N_MELS` rows of `N_BINS` columns. The 66 band
/// edges are uniform in mel between 125 and 7500 Hz; triangles are
/// unnormalized.
pub fn mel_weights() -> Vec<f32> {
    let mel_lo = hz_to_mel(MEL_FMIN_HZ);
    let mel_hi = hz_to_mel(MEL_FMAX_HZ);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let bin_hz = f64::from(TARGET_SAMPLE_RATE) / FFT_SIZE as f64;
    let mut weights = vec![0.0f32; N_MELS * N_BINS];
    for band in 0..N_MELS {
        let (lower, center, upper) = (edges[band], edges[band + 1], edges[band + 2]);
        for bin in 0..N_BINS {
            let f = bin as f64 * bin_hz;
            let w = ((f - lower) / (center - lower)).min((upper - f) / (upper - center));
            if w > 0.0 {
                weights[band * N_BINS + bin] = w as f32;
            }
        }
    }
    weights
}

/// Project STFT magnitudes `(frames, 257)` onto the 64-band mel filterbank.
pub fn mel_filterbank(magnitudes: &Tensor) -> Result<Tensor, AudioError> {
    let data = magnitudes
        .as_f32()
        .map_err(|e| AudioError::DecodeError(e.to_string()))?;
    let frames = match *magnitudes.shape() {
        [frames, bins] if bins == N_BINS => frames,
        _ => {
            return Err(AudioError::DecodeError(format!(
                "expected (frames, {N_BINS}) magnitudes, got {:?}",
                magnitudes.shape()
            )))
        }
    };
    let weights = mel_weights();
    let mut out = vec![0.0f32; frames * N_MELS];
    for f in 0..frames {
        let row = &data[f * N_BINS..(f + 1) * N_BINS];
        for band in 0..N_MELS {
            let w = &weights[band * N_BINS..(band + 1) * N_BINS];
            let mut acc = 0.0f64;
            for (x, y) in row.iter().zip(w) {
                acc += f64::from(*x) * f64::from(*y);
            }
            out[f * N_MELS + band] = acc as f32;
        }
    }
    Ok(Tensor::from_f32(vec![frames, N_MELS], out).expect("finite"))
}

/// `ln(mel + 0.001)`, finite for any non-negative input.
pub fn log_mel(mel: &Tensor) -> Tensor {
    let data = mel.as_f32().expect("mel spectra are float");
    let out: Vec<f32> = data.iter().map(|&v| (v + LOG_OFFSET).ln()).collect();
    Tensor::from_f32(mel.shape().to_vec(), out).expect("offset keeps values finite")
}

/// Slice a `(frames, 64)` log-mel spectrogram into `(P, 96, 64, 1)` patches
/// with 50% overlap. Inputs shorter than one patch are padded with
/// `ln(0.001)`.
pub fn frame_patches(logmel: &Tensor) -> Result<Tensor, AudioError> {
    let data = logmel
        .as_f32()
        .map_err(|e| AudioError::DecodeError(e.to_string()))?;
    let frames = match *logmel.shape() {
        [frames, bands] if bands == N_MELS => frames,
        _ => {
            return Err(AudioError::DecodeError(format!(
                "expected (frames, {N_MELS}) log-mel input, got {:?}",
                logmel.shape()
            )))
        }
    };
    let patches = 1 + frames.saturating_sub(PATCH_FRAMES) / PATCH_HOP;
    let pad = LOG_OFFSET.ln();
    let mut out = Vec::with_capacity(patches * PATCH_FRAMES * N_MELS);
    for p in 0..patches {
        let start = p * PATCH_HOP;
        for row in start..start + PATCH_FRAMES {
            if row < frames {
                out.extend_from_slice(&data[row * N_MELS..(row + 1) * N_MELS]);
            } else {
                out.extend(std::iter::repeat_n(pad, N_MELS));
            }
        }
    }
    Ok(Tensor::from_f32(vec![patches, PATCH_FRAMES, N_MELS, 1], out).expect("finite"))
}

/// Silence handling for the full front-end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontendConfig {
    /// RMS threshold for trimming; `None` disables trimming.
    pub silence_threshold: Option<f32>,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            silence_threshold: Some(DEFAULT_SILENCE_RMS),
        }
    }
}

/// Full front-end: resample to 16 kHz, trim silence, and return log-mel
/// patches of shape `(P, 96, 64, 1)`.
///
/// Trimming runs after resampling so the threshold always means the same
/// thing regardless of the source rate.
pub fn log_mel_patches(clip: &AudioClip, cfg: &FrontendConfig) -> Result<Tensor, AudioError> {
    let resampled = resample(clip, TARGET_SAMPLE_RATE);
    let trimmed = match cfg.silence_threshold {
        Some(threshold) => trim_silence(&resampled, threshold, 0.025)?,
        None => resampled,
    };
    let magnitudes = stft_magnitude(&trimmed)?;
    let mel = mel_filterbank(&magnitudes)?;
    frame_patches(&log_mel(&mel))
}

/// Synthesize a sine tone; used by examples and tests.
pub fn sine_clip(freq_hz: f64, amplitude: f32, secs: f64, rate: u32) -> AudioClip {
    let n = (secs * f64::from(rate)).round() as usize;
    let samples = (0..n)
        .map(|i| amplitude * (2.0 * PI * freq_hz * i as f64 / f64::from(rate)).sin() as f32)
        .collect();
    AudioClip {
        samples,
        sample_rate: rate,
    }
}

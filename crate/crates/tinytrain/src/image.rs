//! Image decoding, preprocessing, and training-time augmentation.
//!
//! Images are decoded to 8-bit RGB, bilinear-resized to 224x224 with
//! half-pixel-center alignment, and rescaled by 1/255 into `[0, 1]`.
//! Augmentation (horizontal flip, rotation, zoom) runs on the training split
//! only and is fully determined by a seed, with each image's RNG derived from
//! `(seed, image index)` so parallel workers cannot change outputs.

use crate::tensor::Tensor;
use crate::util::derive_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::fmt;

/// Side length of the tensor fed to image backbones.
pub const INPUT_SIZE: usize = 224;

/// Preprocessing identity recorded in model metadata and feature caches.
pub const PREPROCESSING_ID: &str = "image-rgb224-v1";

#[derive(Debug)]
pub enum ImageError {
    /// The byte stream is not a well-formed image of the claimed format.
    DecodeError(String),
    /// The format (or PNG color type) is not supported.
    UnsupportedFormat(String),
}

impl fmt::Display for ImageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageError::DecodeError(detail) => write!(f, "image decode error: {detail}"),
            ImageError::UnsupportedFormat(detail) => write!(f, "unsupported image: {detail}"),
        }
    }
}

impl std::error::Error for ImageError {}

/// Decoded 8-bit RGB image, row-major HxWx3.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<RasterImage, ImageError> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(ImageError::DecodeError(format!(
                "{width}x{height} image needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(RasterImage {
            width,
            height,
            pixels,
        })
    }

    #[inline]
    fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let base = (y * self.width + x) * 3;
        [self.pixels[base], self.pixels[base + 1], self.pixels[base + 2]]
    }
}

/// File formats accepted by [`decode_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

/// Guess the format from magic bytes.
pub fn sniff_format(bytes: &[u8]) -> Option<ImageFormat> {
    if bytes.starts_with(b"P6") {
        Some(ImageFormat::Ppm)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        Some(ImageFormat::Png)
    } else {
        None
    }
}

pub fn decode_image(bytes: &[u8], format: ImageFormat) -> Result<RasterImage, ImageError> {
    match format {
        ImageFormat::Ppm => decode_ppm(bytes),
        ImageFormat::Png => decode_png(bytes),
    }
}

/// Binary PPM (P6), maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<RasterImage, ImageError> {
    let mut pos = 0usize;
    let mut token = || -> Result<String, ImageError> {
        // Skip whitespace and '#' comments between header tokens.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::DecodeError("truncated PPM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = token()?;
    if magic != "P6" {
        return Err(ImageError::UnsupportedFormat(format!(
            "expected P6 PPM, got '{magic}'"
        )));
    }
    let parse = |s: String| -> Result<usize, ImageError> {
        s.parse()
            .map_err(|_| ImageError::DecodeError(format!("bad PPM header field '{s}'")))
    };
    let width = parse(token()?)?;
    let height = parse(token()?)?;
    let maxval = parse(token()?)?;
    if maxval != 255 {
        return Err(ImageError::UnsupportedFormat(format!(
            "PPM maxval {maxval} (only 255 supported)"
        )));
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let need = width * height * 3;
    let payload = bytes
        .get(pos..pos + need)
        .ok_or_else(|| ImageError::DecodeError("PPM payload truncated".into()))?;
    RasterImage::new(width, height, payload.to_vec())
}

/// Encode to binary PPM (P6); the inverse of [`decode_ppm`].
pub fn encode_ppm(img: &RasterImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

fn decode_png(bytes: &[u8]) -> Result<RasterImage, ImageError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| ImageError::DecodeError(format!("png: {e}")))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| ImageError::DecodeError(format!("png: {e}")))?;
    buf.truncate(info.buffer_size());
    if info.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::UnsupportedFormat(format!(
            "png bit depth {:?}",
            info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let rgb = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => {
            buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect()
        }
        other => {
            return Err(ImageError::UnsupportedFormat(format!(
                "png color type {other:?}"
            )))
        }
    };
    RasterImage::new(w, h, rgb)
}

/// Bilinear sample with half-pixel centers and edge clamping. Returns the
/// interpolated value of channel `c` at source coordinates `(sx, sy)`.
fn bilinear(img: &RasterImage, sx: f32, sy: f32, c: usize) -> f32 {
    let clamp_x = |v: isize| v.clamp(0, img.width as isize - 1) as usize;
    let clamp_y = |v: isize| v.clamp(0, img.height as isize - 1) as usize;
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let (x0i, y0i) = (x0 as isize, y0 as isize);
    let p = |x: isize, y: isize| -> f32 { f32::from(img.pixel(clamp_x(x), clamp_y(y))[c]) };
    let top = p(x0i, y0i) * (1.0 - fx) + p(x0i + 1, y0i) * fx;
    let bottom = p(x0i, y0i + 1) * (1.0 - fx) + p(x0i + 1, y0i + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resize + rescale into a backbone-ready `(1, 224, 224, 3)` tensor with
/// values in `[0, 1]`.
pub fn preprocess(img: &RasterImage) -> Tensor {
    preprocess_to(img, INPUT_SIZE)
}

pub(crate) fn preprocess_to(img: &RasterImage, size: usize) -> Tensor {
    let mut out = Vec::with_capacity(size * size * 3);
    let sx_scale = img.width as f32 / size as f32;
    let sy_scale = img.height as f32 / size as f32;
    for y in 0..size {
        let sy = (y as f32 + 0.5) * sy_scale - 0.5;
        for x in 0..size {
            let sx = (x as f32 + 0.5) * sx_scale - 0.5;
            for c in 0..3 {
                out.push(bilinear(img, sx, sy, c) / 255.0);
            }
        }
    }
    Tensor::from_f32(vec![1, size, size, 3], out).expect("u8 inputs cannot produce non-finite")
}

/// Training-split augmentation settings. Disabled means identity.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub hflip_prob: f32,
    pub rotation_max_deg: f32,
    /// Zoom factor range `lo..=hi` with `0 < lo <= 1 <= hi`.
    pub zoom_range: (f32, f32),
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            hflip_prob: 0.5,
            rotation_max_deg: 15.0,
            zoom_range: (0.8, 1.25),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(format!("hflip_prob {} outside [0, 1]", self.hflip_prob));
        }
        if !(0.0..=180.0).contains(&self.rotation_max_deg) {
            return Err(format!(
                "rotation_max_deg {} outside [0, 180]",
                self.rotation_max_deg
            ));
        }
        let (lo, hi) = self.zoom_range;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && lo <= hi) {
            return Err(format!("zoom range ({lo}, {hi}) must satisfy 0 < lo <= 1 <= hi"));
        }
        Ok(())
    }

    /// RNG for one image, derived from the config seed and the image's index
    /// in the training stream.
    pub fn rng_for(&self, image_index: u64) -> ChaCha8Rng {
        derive_rng(self.seed, image_index)
    }
}

fn hflip(img: &RasterImage) -> RasterImage {
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for y in 0..img.height {
        for x in (0..img.width).rev() {
            pixels.extend_from_slice(&img.pixel(x, y));
        }
    }
    RasterImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}

/// Resample through an inverse map `dst -> src` with bilinear interpolation
/// and edge-replicate fill.
fn warp(img: &RasterImage, map: impl Fn(f32, f32) -> (f32, f32)) -> RasterImage {
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for y in 0..img.height {
        for x in 0..img.width {
            let (sx, sy) = map(x as f32, y as f32);
            for c in 0..3 {
                pixels.push(bilinear(img, sx, sy, c).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RasterImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}

/// Apply horizontal flip, rotation, and zoom (in that order), each drawn
/// from `rng`. Identity when the config is disabled; exact identity when a
/// drawn parameter is degenerate (angle 0, zoom 1).
pub fn augment(img: &RasterImage, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> RasterImage {
    if !cfg.enabled {
        return img.clone();
    }
    // Fixed draw order keeps the stream stable regardless of which
    // transforms end up active.
    let flip_draw: f32 = rng.random();
    let angle_deg: f32 = if cfg.rotation_max_deg > 0.0 {
        rng.random_range(-cfg.rotation_max_deg..=cfg.rotation_max_deg)
    } else {
        0.0
    };
    let (zlo, zhi) = cfg.zoom_range;
    let zoom: f32 = if zlo < zhi { rng.random_range(zlo..=zhi) } else { zlo };

    let mut out = if flip_draw < cfg.hflip_prob {
        hflip(img)
    } else {
        img.clone()
    };
    let cx = (img.width as f32 - 1.0) / 2.0;
    let cy = (img.height as f32 - 1.0) / 2.0;
    if angle_deg != 0.0 {
        let theta = angle_deg.to_radians();
        let (sin, cos) = theta.sin_cos();
        out = warp(&out, |x, y| {
            let (dx, dy) = (x - cx, y - cy);
            (cx + cos * dx + sin * dy, cy - sin * dx + cos * dy)
        });
    }
    if zoom != 1.0 {
        out = warp(&out, |x, y| (cx + (x - cx) / zoom, cy + (y - cy) / zoom));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: usize, h: usize) -> RasterImage {
        let mut pixels = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                pixels.push((x * 7 % 256) as u8);
                pixels.push((y * 13 % 256) as u8);
                pixels.push(((x + y) * 3 % 256) as u8);
            }
        }
        RasterImage::new(w, h, pixels).unwrap()
    }

    #[test]
    fn ppm_round_trip_with_comment() {
        let img = gradient_image(3, 2);
        let mut bytes = b"P6 # comment\n# another\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&img.pixels);
        let decoded = decode_ppm(&bytes).unwrap();
        assert_eq!(decoded, img);
        assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn truncated_ppm_is_decode_error() {
        let img = gradient_image(4, 4);
        let mut bytes = encode_ppm(&img);
        bytes.truncate(bytes.len() - 5);
        assert!(matches!(
            decode_ppm(&bytes),
            Err(ImageError::DecodeError(_))
        ));
    }

    #[test]
    fn non_p6_is_unsupported() {
        assert!(matches!(
            decode_ppm(b"P5\n2 2\n255\n...."),
            Err(ImageError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn png_and_ppm_encodings_decode_equal() {
        let img = gradient_image(9, 5);
        let ppm = encode_ppm(&img);

        let mut png_bytes = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut png_bytes, 9, 5);
            encoder.set_color(png::ColorType::Rgb);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder.write_header().unwrap();
            writer.write_image_data(&img.pixels).unwrap();
        }

        let from_ppm = decode_image(&ppm, ImageFormat::Ppm).unwrap();
        let from_png = decode_image(&png_bytes, ImageFormat::Png).unwrap();
        assert_eq!(from_ppm, from_png);
        assert_eq!(sniff_format(&png_bytes), Some(ImageFormat::Png));
        assert_eq!(sniff_format(&ppm), Some(ImageFormat::Ppm));
    }

    #[test]
    fn constant_image_preprocesses_to_constant_one() {
        let img = RasterImage::new(37, 51, vec![255u8; 37 * 51 * 3]).unwrap();
        let t = preprocess(&img);
        assert_eq!(t.shape(), &[1, INPUT_SIZE, INPUT_SIZE, 3]);
        assert!(t.as_f32().unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn preprocess_is_identity_at_224() {
        let img = gradient_image(224, 224);
        let t = preprocess(&img);
        let data = t.as_f32().unwrap();
        for (i, &px) in img.pixels.iter().enumerate() {
            assert!((data[i] - f32::from(px) / 255.0).abs() < 1e-6);
        }
    }

    #[test]
    fn upscale_matches_hand_bilinear() {
        // 2x2 grayscale-replicated image [[0,0],[255,255]] upscaled to 4x4.
        // With half-pixel centers, source y coordinates are
        // (0.5+i)*0.5-0.5 = -0.25, 0.25, 0.75, 1.25; clamped rows give
        // weights 0, 0.25, 0.75, 1 on the bottom row.
        let img = RasterImage::new(2, 2, vec![0, 0, 0, 0, 0, 0, 255, 255, 255, 255, 255, 255])
            .unwrap();
        let t = preprocess_to(&img, 4);
        let data = t.as_f32().unwrap();
        let expected_rows = [0.0f32, 0.25, 0.75, 1.0];
        for (row, &want) in expected_rows.iter().enumerate() {
            for x in 0..4 {
                for c in 0..3 {
                    let got = data[(row * 4 + x) * 3 + c];
                    assert!(
                        (got - want).abs() < 1e-6,
                        "row {row} x {x} c {c}: got {got}, want {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn disabled_augment_is_identity() {
        let img = gradient_image(16, 16);
        let cfg = AugmentConfig {
            enabled: false,
            ..AugmentConfig::default()
        };
        let mut rng = cfg.rng_for(0);
        assert_eq!(augment(&img, &cfg, &mut rng), img);
    }

    #[test]
    fn forced_hflip_is_an_involution() {
        let img = gradient_image(15, 9);
        let cfg = AugmentConfig {
            enabled: true,
            hflip_prob: 1.0,
            rotation_max_deg: 0.0,
            zoom_range: (1.0, 1.0),
            seed: 3,
        };
        let mut rng = cfg.rng_for(0);
        let once = augment(&img, &cfg, &mut rng);
        assert_ne!(once, img);
        let twice = augment(&once, &cfg, &mut rng);
        assert_eq!(twice, img);
    }

    #[test]
    fn degenerate_ranges_are_identity_for_any_seed() {
        let img = gradient_image(12, 12);
        let cfg = AugmentConfig {
            enabled: true,
            hflip_prob: 0.0,
            rotation_max_deg: 0.0,
            zoom_range: (1.0, 1.0),
            seed: 0,
        };
        for idx in 0..5 {
            let mut rng = cfg.rng_for(idx);
            assert_eq!(augment(&img, &cfg, &mut rng), img);
        }
    }

    #[test]
    fn augment_is_deterministic_per_seed() {
        let img = gradient_image(20, 20);
        let cfg = AugmentConfig {
            seed: 11,
            ..AugmentConfig::default()
        };
        let a = augment(&img, &cfg, &mut cfg.rng_for(4));
        let b = augment(&img, &cfg, &mut cfg.rng_for(4));
        assert_eq!(a, b);
        let c = augment(&img, &cfg, &mut cfg.rng_for(5));
        // Different stream, almost surely different output.
        assert_ne!(a, c);
    }

    #[test]
    fn config_validation_bounds() {
        let mut cfg = AugmentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.hflip_prob = 1.5;
        assert!(cfg.validate().is_err());
        cfg.hflip_prob = 0.5;
        cfg.zoom_range = (1.2, 0.9);
        assert!(cfg.validate().is_err());
    }
}

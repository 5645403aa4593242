//! Payload codecs and metrics: seeded bitstreams, grayscale image <->
//! bitstream conversion, binary PGM files, datarate, and PSNR.

use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

use rand::Rng;

use crate::seeds;

#[derive(Debug, Error)]
pub enum PayloadError {
    #[error("length must be positive")]
    ZeroLength,
    #[error("bit count {got} does not match {want} for {width}x{height} pixels")]
    BitLengthMismatch { got: usize, want: usize, width: usize, height: usize },
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("invalid PGM: {0}")]
    BadPgm(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, PayloadError> {
        if pixels.len() != width * height {
            return Err(PayloadError::BitLengthMismatch {
                got: pixels.len() * 8,
                want: width * height * 8,
                width,
                height,
            });
        }
        Ok(Self { width, height, pixels })
    }
}

/// Deterministic pseudorandom bit sequence.
pub fn random_bitstream(length: usize, seed: u64) -> Result<Vec<u8>, PayloadError> {
    if length == 0 {
        return Err(PayloadError::ZeroLength);
    }
    let mut rng = seeds::rng_from(seed);
    Ok((0..length).map(|_| rng.gen_range(0..2u8)).collect())
}

/// Vectorize an image to bits: row-major pixels, MSB-first per byte.
pub fn image_to_bits(img: &GrayImage) -> Vec<u8> {
    let mut bits = Vec::with_capacity(img.pixels.len() * 8);
    for &p in &img.pixels {
        for i in (0..8).rev() {
            bits.push((p >> i) & 1);
        }
    }
    bits
}

/// Rebuild an image from bits produced by [`image_to_bits`].
pub fn bits_to_image(bits: &[u8], width: usize, height: usize) -> Result<GrayImage, PayloadError> {
    let want = 8 * width * height;
    if bits.len() != want {
        return Err(PayloadError::BitLengthMismatch { got: bits.len(), want, width, height });
    }
    let pixels = bits
        .chunks_exact(8)
        .map(|byte| byte.iter().fold(0u8, |acc, &b| (acc << 1) | b))
        .collect();
    Ok(GrayImage { width, height, pixels })
}

/// Correct payload bits per second, reported in kbps.
pub fn window_datarate(correct_bits: usize, duration_s: f64) -> Result<f64, PayloadError> {
    if !(duration_s > 0.0) {
        return Err(PayloadError::NonPositiveDuration(duration_s));
    }
    Ok(correct_bits as f64 / duration_s / 1000.0)
}

/// Peak signal-to-noise ratio in dB between two equally sized images.
/// Identical images return `f64::INFINITY`.
pub fn image_psnr(reference: &GrayImage, got: &GrayImage) -> Result<f64, PayloadError> {
    if reference.width != got.width || reference.height != got.height {
        return Err(PayloadError::DimensionMismatch(
            reference.width,
            reference.height,
            got.width,
            got.height,
        ));
    }
    Ok(psnr_bytes(&reference.pixels, &got.pixels))
}

/// PSNR over raw byte slices (panics on length mismatch; callers guarantee it).
pub fn psnr_bytes(reference: &[u8], got: &[u8]) -> f64 {
    assert_eq!(reference.len(), got.len());
    let mse: f64 = reference
        .iter()
        .zip(got)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

/// Write a binary PGM (P5, maxval 255).
pub fn write_pgm(img: &GrayImage, path: &Path) -> Result<(), PayloadError> {
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", img.width, img.height)?;
    f.write_all(&img.pixels)?;
    Ok(())
}

/// Read a binary PGM (P5, maxval 255). Comments after the magic are honored.
pub fn read_pgm(path: &Path) -> Result<GrayImage, PayloadError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if !bytes.starts_with(b"P5") {
        return Err(PayloadError::BadPgm("missing P5 magic".into()));
    }
    // Header: three whitespace-separated tokens (width, height, maxval) with
    // optional '#' comment lines, then a single whitespace byte before data.
    let mut pos = 2;
    let mut tokens: Vec<usize> = Vec::new();
    while tokens.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(PayloadError::BadPgm("truncated header".into()));
        }
        let tok = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| PayloadError::BadPgm("non-ascii header".into()))?;
        tokens.push(
            tok.parse().map_err(|_| PayloadError::BadPgm(format!("bad header token '{tok}'")))?,
        );
    }
    if tokens[2] != 255 {
        return Err(PayloadError::BadPgm(format!("maxval {} unsupported", tokens[2])));
    }
    pos += 1; // single whitespace after maxval
    let (width, height) = (tokens[0], tokens[1]);
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(PayloadError::BadPgm(format!(
            "expected {need} pixel bytes, found {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    GrayImage::new(width, height, bytes[pos..pos + need].to_vec())
}

/// Deterministic synthetic test image: a diagonal gradient with a bright
/// cross and a dark frame, enough structure to make corruption visible.
pub fn test_pattern(width: usize, height: usize) -> GrayImage {
    let mut pixels = vec![0u8; width * height];
    for y in 0..height {
        for x in 0..width {
            let g = ((x + y) * 255 / (width + height - 2).max(1)) as u8;
            let mut v = g;
            if x == 0 || y == 0 || x == width - 1 || y == height - 1 {
                v = 16;
            }
            if x == width / 2 || y == height / 2 {
                v = 240;
            }
            pixels[y * width + x] = v;
        }
    }
    GrayImage { width, height, pixels }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitstream_deterministic() {
        let a = random_bitstream(1000, 5).unwrap();
        let b = random_bitstream(1000, 5).unwrap();
        assert_eq!(a, b);
        let c = random_bitstream(1000, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bitstream_balanced() {
        let bits = random_bitstream(100_000, 42).unwrap();
        let ones: usize = bits.iter().map(|&b| b as usize).sum();
        let frac = ones as f64 / bits.len() as f64;
        assert!((0.49..=0.51).contains(&frac), "ones fraction {frac}");
    }

    #[test]
    fn bitstream_zero_length_rejected() {
        assert!(random_bitstream(0, 1).is_err());
    }

    #[test]
    fn image_bits_msb_first() {
        let img = GrayImage::new(2, 2, vec![0, 255, 128, 64]).unwrap();
        let bits = image_to_bits(&img);
        let want: Vec<u8> = [
            [0, 0, 0, 0, 0, 0, 0, 0],
            [1, 1, 1, 1, 1, 1, 1, 1],
            [1, 0, 0, 0, 0, 0, 0, 0],
            [0, 1, 0, 0, 0, 0, 0, 0],
        ]
        .concat();
        assert_eq!(bits, want);
    }

    #[test]
    fn image_round_trip() {
        let img = test_pattern(13, 7);
        let bits = image_to_bits(&img);
        let back = bits_to_image(&bits, 13, 7).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn msb_flip_changes_pixel_by_128() {
        let img = GrayImage::new(1, 1, vec![37]).unwrap();
        let mut bits = image_to_bits(&img);
        bits[0] ^= 1;
        let back = bits_to_image(&bits, 1, 1).unwrap();
        assert_eq!((back.pixels[0] as i16 - 37i16).abs(), 128);
    }

    #[test]
    fn bits_length_checked() {
        assert!(bits_to_image(&[0; 9], 1, 1).is_err());
    }

    #[test]
    fn datarate_cases() {
        assert_eq!(window_datarate(5000, 0.01).unwrap(), 500.0);
        assert_eq!(window_datarate(0, 1.0).unwrap(), 0.0);
        assert!(window_datarate(1, 0.0).is_err());
        assert!(window_datarate(1, -1.0).is_err());
    }

    #[test]
    fn psnr_cases() {
        let a = GrayImage::new(2, 2, vec![0; 4]).unwrap();
        assert_eq!(image_psnr(&a, &a).unwrap(), f64::INFINITY);

        let black = GrayImage::new(2, 2, vec![0; 4]).unwrap();
        let white = GrayImage::new(2, 2, vec![255; 4]).unwrap();
        assert!((image_psnr(&black, &white).unwrap() - 0.0).abs() < 1e-12);

        // One pixel off by 1 in a 100-pixel image: MSE = 0.01.
        let mut pixels = vec![100u8; 100];
        let reference = GrayImage::new(10, 10, pixels.clone()).unwrap();
        pixels[17] = 101;
        let got = GrayImage::new(10, 10, pixels).unwrap();
        let psnr = image_psnr(&reference, &got).unwrap();
        assert!((psnr - 10.0 * (255.0f64 * 255.0 / 0.01).log10()).abs() < 1e-9);
        assert!((psnr - 68.13).abs() < 0.01);
    }

    #[test]
    fn psnr_dimension_mismatch() {
        let a = GrayImage::new(2, 2, vec![0; 4]).unwrap();
        let b = GrayImage::new(4, 1, vec![0; 4]).unwrap();
        assert!(image_psnr(&a, &b).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let img = test_pattern(9, 5);
        write_pgm(&img, &path).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pgm_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        std::fs::write(&path, b"P6\n1 1\n255\n0").unwrap();
        assert!(read_pgm(&path).is_err());
        std::fs::write(&path, b"P5\n4 4\n255\nxy").unwrap();
        assert!(read_pgm(&path).is_err());
    }
}

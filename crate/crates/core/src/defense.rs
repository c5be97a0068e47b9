//! Input-transformation defenses and the perturbation-budget check.

use std::io::Cursor;
use std::path::Path;

use num_rational::Ratio;
use thiserror::Error;

use crate::config::DefenseKind;
use crate::types::{ImageOrigin, ImageRef};

pub const DEFAULT_JPEG_QUALITY: u8 = 50;
pub const DEFAULT_BIT_DEPTH: u8 = 4;

/// A perturbation budget as an exact fraction of the full 0..=255 range.
pub type Epsilon = Ratio<u32>;

#[derive(Debug, Error)]
pub enum DefenseError {
    #[error("image has zero size")]
    Empty,
    #[error("image is too large for baseline JPEG ({width}x{height})")]
    TooLarge { width: u32, height: u32 },
    #[error("JPEG quality must be in 1..=100, got {0}")]
    Quality(u8),
    #[error("bit depth must be in 1..=8, got {0}")]
    BitDepth(u8),
    #[error("epsilon must be in [0, 1], got {0}")]
    Epsilon(Ratio<u32>),
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("pixel buffer holds {got} bytes, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("cannot encode image: {0}")]
    Encode(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Row-major 8-bit RGB pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, DefenseError> {
        if width == 0 || height == 0 {
            return Err(DefenseError::Empty);
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(DefenseError::BufferSize {
                expected,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, DefenseError> {
        let n = width as usize * height as usize;
        Self::new(width, height, rgb.iter().copied().cycle().take(n * 3).collect())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    /// Decodes PNG or JPEG (or anything else `image` recognizes) to RGB8.
    pub fn decode(bytes: &[u8]) -> Result<Self, DefenseError> {
        let img = image::load_from_memory(bytes).map_err(|e| DefenseError::Decode(e.to_string()))?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(w, h, rgb.into_raw())
    }

    pub fn open(path: &Path) -> Result<Self, DefenseError> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn to_png(&self) -> Result<Vec<u8>, DefenseError> {
        let mut out = Vec::new();
        image::write_buffer_with_format(
            &mut Cursor::new(&mut out),
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|e| DefenseError::Encode(e.to_string()))?;
        Ok(out)
    }
}

/// Baseline JPEG round trip with 4:2:0 chroma subsampling.
pub fn jpeg_compress(image: &ImageBuffer, quality: u8) -> Result<ImageBuffer, DefenseError> {
    if !(1..=100).contains(&quality) {
        return Err(DefenseError::Quality(quality));
    }
    let (w, h) = (image.width, image.height);
    let (Ok(w16), Ok(h16)) = (u16::try_from(w), u16::try_from(h)) else {
        return Err(DefenseError::TooLarge {
            width: w,
            height: h,
        });
    };
    let mut encoded = Vec::new();
    let mut encoder = jpeg_encoder::Encoder::new(&mut encoded, quality);
    encoder.set_sampling_factor(jpeg_encoder::SamplingFactor::R_4_2_0);
    encoder.set_progressive(false);
    encoder
        .encode(&image.pixels, w16, h16, jpeg_encoder::ColorType::Rgb)
        .map_err(|e| DefenseError::Encode(e.to_string()))?;
    let decoded = ImageBuffer::decode(&encoded)?;
    debug_assert_eq!((decoded.width, decoded.height), (w, h));
    Ok(decoded)
}

/// Quantizes one channel value to `2^bit_depth` levels.
///
/// `v -> round(round(v * L / 255) * 255 / L)` with `L = 2^b - 1`; both
/// roundings are to nearest, ties away from zero, computed in integers.
pub fn squeeze_value(v: u8, bit_depth: u8) -> u8 {
    let levels = (1u32 << bit_depth) - 1;
    let q = round_div(v as u32 * levels, 255);
    round_div(q * 255, levels) as u8
}

/// `round(n / d)` for non-negative operands, ties rounding up.
fn round_div(n: u32, d: u32) -> u32 {
    (2 * n + d) / (2 * d)
}

pub fn feature_squeeze(image: &ImageBuffer, bit_depth: u8) -> Result<ImageBuffer, DefenseError> {
    if !(1..=8).contains(&bit_depth) {
        return Err(DefenseError::BitDepth(bit_depth));
    }
    let table: Vec<u8> = (0..=255u8).map(|v| squeeze_value(v, bit_depth)).collect();
    Ok(ImageBuffer {
        width: image.width,
        height: image.height,
        pixels: image.pixels.iter().map(|&v| table[v as usize]).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetOutcome {
    Pass { max_delta: Ratio<u32> },
    Fail { max_delta: Ratio<u32> },
}

impl BudgetOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, BudgetOutcome::Pass { .. })
    }

    /// Largest per-channel change, normalized to [0, 1].
    pub fn max_delta(&self) -> Ratio<u32> {
        match self {
            BudgetOutcome::Pass { max_delta } | BudgetOutcome::Fail { max_delta } => *max_delta,
        }
    }
}

/// L-infinity budget check: passes iff `max |a - b| / 255 <= epsilon`.
pub fn verify_budget(
    clean: &ImageBuffer,
    perturbed: &ImageBuffer,
    epsilon: Ratio<u32>,
) -> Result<BudgetOutcome, DefenseError> {
    if epsilon > Ratio::from_integer(1) {
        return Err(DefenseError::Epsilon(epsilon));
    }
    if (clean.width, clean.height) != (perturbed.width, perturbed.height) {
        return Err(DefenseError::DimensionMismatch(
            clean.width,
            clean.height,
            perturbed.width,
            perturbed.height,
        ));
    }
    let max = clean
        .pixels
        .iter()
        .zip(&perturbed.pixels)
        .map(|(a, b)| a.abs_diff(*b) as u32)
        .max()
        .unwrap_or(0);
    let max_delta = Ratio::new(max, 255);
    Ok(if max_delta <= epsilon {
        BudgetOutcome::Pass { max_delta }
    } else {
        BudgetOutcome::Fail { max_delta }
    })
}

/// Applies the configured defense with its default parameter.
pub fn apply(defense: DefenseKind, image: &ImageBuffer) -> Result<ImageBuffer, DefenseError> {
    match defense {
        DefenseKind::None => Ok(image.clone()),
        DefenseKind::Jpeg => jpeg_compress(image, DEFAULT_JPEG_QUALITY),
        DefenseKind::FeatSq => feature_squeeze(image, DEFAULT_BIT_DEPTH),
    }
}

/// Decodes, defends, and re-encodes an image reference as PNG, marking it
/// `Defended`. `DefenseKind::None` returns the reference unchanged.
pub fn defend_image(defense: DefenseKind, image: &ImageRef) -> Result<ImageRef, DefenseError> {
    if defense == DefenseKind::None {
        return Ok(image.clone());
    }
    let decoded = ImageBuffer::decode(image.payload.bytes())?;
    let defended = apply(defense, &decoded)?;
    Ok(ImageRef::new(
        image.id.clone(),
        defended.to_png()?,
        ImageOrigin::Defended,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_image(seed: u64, w: u32, h: u32) -> ImageBuffer {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pixels = (0..w * h * 3).map(|_| rng.gen()).collect();
        ImageBuffer::new(w, h, pixels).unwrap()
    }

    /// Float reference for the two-step quantizer.
    fn squeeze_oracle(v: u8, b: u8) -> u8 {
        let l = f64::from((1u32 << b) - 1);
        let q = (f64::from(v) * l / 255.0).round();
        (q * 255.0 / l).round() as u8
    }

    #[test]
    fn squeeze_hand_value() {
        assert_eq!(squeeze_value(200, 4), 204);
    }

    #[test]
    fn squeeze_matches_float_reference_everywhere() {
        for b in 1..=8 {
            for v in 0..=255u8 {
                assert_eq!(squeeze_value(v, b), squeeze_oracle(v, b), "v={v} b={b}");
            }
        }
    }

    #[test]
    fn squeeze_edge_depths() {
        let img = random_image(1, 16, 16);
        assert_eq!(feature_squeeze(&img, 8).unwrap(), img);
        let one = feature_squeeze(&img, 1).unwrap();
        assert!(one.pixels().iter().all(|v| *v == 0 || *v == 255));
        assert!(matches!(feature_squeeze(&img, 0), Err(DefenseError::BitDepth(0))));
        assert!(matches!(feature_squeeze(&img, 9), Err(DefenseError::BitDepth(9))));
    }

    #[test]
    fn jpeg_on_constant_gray_is_near_lossless() {
        let gray = ImageBuffer::filled(64, 64, [128, 128, 128]).unwrap();
        let out = jpeg_compress(&gray, 50).unwrap();
        assert_eq!((out.width(), out.height()), (64, 64));
        let max = gray
            .pixels()
            .iter()
            .zip(out.pixels())
            .map(|(a, b)| a.abs_diff(*b))
            .max()
            .unwrap();
        assert!(max <= 2, "max deviation {max}");
    }

    #[test]
    fn jpeg_quality_bounds() {
        let img = random_image(2, 9, 7);
        let out = jpeg_compress(&img, 100).unwrap();
        assert_eq!((out.width(), out.height()), (9, 7));
        assert!(matches!(jpeg_compress(&img, 0), Err(DefenseError::Quality(0))));
        assert!(matches!(jpeg_compress(&img, 101), Err(DefenseError::Quality(101))));
    }

    #[test]
    fn zero_sized_image_rejected() {
        assert!(matches!(ImageBuffer::new(0, 4, vec![]), Err(DefenseError::Empty)));
    }

    #[test]
    fn budget_boundaries() {
        let clean = ImageBuffer::filled(4, 4, [100, 100, 100]).unwrap();
        let eps = Ratio::new(16, 255);
        assert!(verify_budget(&clean, &clean, Ratio::from_integer(0)).unwrap().passed());

        let mut plus16 = clean.clone();
        plus16.pixels_mut()[5] = 116;
        assert!(verify_budget(&clean, &plus16, eps).unwrap().passed());

        let mut plus17 = clean.clone();
        plus17.pixels_mut()[5] = 117;
        let out = verify_budget(&clean, &plus17, eps).unwrap();
        assert_eq!(out, BudgetOutcome::Fail { max_delta: Ratio::new(17, 255) });

        let other = ImageBuffer::filled(4, 5, [0, 0, 0]).unwrap();
        assert!(matches!(
            verify_budget(&clean, &other, eps),
            Err(DefenseError::DimensionMismatch(..))
        ));
        assert!(verify_budget(&clean, &clean, Ratio::new(3, 2)).is_err());
    }

    #[test]
    fn png_roundtrip_and_defend_image() {
        let img = random_image(3, 5, 3);
        let png = img.to_png().unwrap();
        assert_eq!(ImageBuffer::decode(&png).unwrap(), img);
        let r = ImageRef::new("x", png, ImageOrigin::Clean);
        let d = defend_image(DefenseKind::FeatSq, &r).unwrap();
        assert_eq!(d.origin, ImageOrigin::Defended);
        let back = ImageBuffer::decode(d.payload.bytes()).unwrap();
        assert_eq!(back, feature_squeeze(&img, 4).unwrap());
        assert_eq!(defend_image(DefenseKind::None, &r).unwrap().origin, ImageOrigin::Clean);
    }

    proptest! {
        #[test]
        fn squeeze_idempotent_monotone_and_fixes_extremes(v in any::<u8>(), w in any::<u8>(), b in 1u8..=8) {
            let s = squeeze_value(v, b);
            prop_assert_eq!(squeeze_value(s, b), s);
            if v <= w {
                prop_assert!(s <= squeeze_value(w, b));
            }
            prop_assert_eq!(squeeze_value(0, b), 0);
            prop_assert_eq!(squeeze_value(255, b), 255);
        }

        #[test]
        fn jpeg_preserves_dimensions(w in 1u32..40, h in 1u32..40, q in 1u8..=100, seed in any::<u64>()) {
            let img = random_image(seed, w, h);
            let out = jpeg_compress(&img, q).unwrap();
            prop_assert_eq!((out.width(), out.height(), out.pixels().len()), (w, h, (w * h * 3) as usize));
        }

        #[test]
        fn budget_is_symmetric(seed in any::<u64>(), num in 0u32..=255) {
            let a = random_image(seed, 6, 6);
            let b = random_image(seed.wrapping_add(1), 6, 6);
            let eps = Ratio::new(num, 255);
            prop_assert_eq!(verify_budget(&a, &b, eps).unwrap(), verify_budget(&b, &a, eps).unwrap());
        }
    }
}

//! RandAugment: `n_ops` operations drawn uniformly from a fixed catalog,
//! each applied at one shared integer magnitude in `0..=10`.
//!
//! Magnitude maps linearly onto each operation's parameter:
//!
//! | op            | magnitude 0 | magnitude 10             |
//! |---------------|-------------|--------------------------|
//! | rotate        | 0°          | 30°                      |
//! | solarize      | no pixel    | every level >= 1 inverted|
//! | posterize     | 8 bits      | 4 bits                   |
//! | color, contrast, brightness, sharpness | factor 1.0 | factor 1.9 |
//! | shear-x/y     | 0           | 0.3                      |
//! | translate-x/y | 0           | 45% of the extent        |
//!
//! Identity, auto-contrast and equalize ignore the magnitude. Geometric ops
//! sample nearest-neighbour and fill uncovered pixels with gray 128.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::seed::derive_seed;

pub const MAX_MAGNITUDE: u8 = 10;
pub const FILL: u8 = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AugmentOp {
    Identity,
    AutoContrast,
    Equalize,
    Rotate,
    Solarize,
    Color,
    Posterize,
    Contrast,
    Brightness,
    Sharpness,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
}

const CATALOG: [AugmentOp; 14] = [
    AugmentOp::Identity,
    AugmentOp::AutoContrast,
    AugmentOp::Equalize,
    AugmentOp::Rotate,
    AugmentOp::Solarize,
    AugmentOp::Color,
    AugmentOp::Posterize,
    AugmentOp::Contrast,
    AugmentOp::Brightness,
    AugmentOp::Sharpness,
    AugmentOp::ShearX,
    AugmentOp::ShearY,
    AugmentOp::TranslateX,
    AugmentOp::TranslateY,
];

/// The operation catalog, in its fixed order.
pub fn catalog() -> &'static [AugmentOp] {
    &CATALOG
}

impl AugmentOp {
    pub fn name(self) -> &'static str {
        match self {
            AugmentOp::Identity => "identity",
            AugmentOp::AutoContrast => "auto-contrast",
            AugmentOp::Equalize => "equalize",
            AugmentOp::Rotate => "rotate",
            AugmentOp::Solarize => "solarize",
            AugmentOp::Color => "color",
            AugmentOp::Posterize => "posterize",
            AugmentOp::Contrast => "contrast",
            AugmentOp::Brightness => "brightness",
            AugmentOp::Sharpness => "sharpness",
            AugmentOp::ShearX => "shear-x",
            AugmentOp::ShearY => "shear-y",
            AugmentOp::TranslateX => "translate-x",
            AugmentOp::TranslateY => "translate-y",
        }
    }
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CATALOG
            .iter()
            .copied()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Policy(format!("unknown augmentation op {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub n_ops: usize,
    pub magnitude: u8,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            n_ops: 2,
            magnitude: 9,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn new(n_ops: usize, magnitude: u8, seed: u64) -> Result<Self> {
        let p = Self {
            n_ops,
            magnitude,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_magnitude(self.magnitude)
    }
}

/// Number of distinct policies when both the op count and the magnitude
/// range over `levels` values: the whole search is a `levels × levels` grid.
pub fn search_space_size(levels: u64) -> u64 {
    levels * levels
}

fn check_magnitude(m: u8) -> Result<()> {
    if m > MAX_MAGNITUDE {
        return Err(Error::Policy(format!(
            "magnitude {m} outside 0..={MAX_MAGNITUDE}"
        )));
    }
    Ok(())
}

/// The ops `rand_augment` applies for `draw_index`, in order.
pub fn sample_ops(policy: &AugmentPolicy, draw_index: u64) -> Vec<AugmentOp> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(policy.seed, "rand-augment", draw_index));
    (0..policy.n_ops)
        .map(|_| CATALOG[rng.random_range(0..CATALOG.len())])
        .collect()
}

pub fn rand_augment(img: &ImageBuffer, policy: &AugmentPolicy, draw_index: u64) -> Result<ImageBuffer> {
    policy.validate()?;
    let mut out = img.clone();
    for op in sample_ops(policy, draw_index) {
        out = apply_op(&out, op, policy.magnitude)?;
    }
    Ok(out)
}

pub fn apply_op(img: &ImageBuffer, op: AugmentOp, magnitude: u8) -> Result<ImageBuffer> {
    check_magnitude(magnitude)?;
    let m = magnitude as f64;
    let factor = 1.0 + 0.09 * m;
    Ok(match op {
        AugmentOp::Identity => img.clone(),
        AugmentOp::AutoContrast => auto_contrast(img),
        AugmentOp::Equalize => equalize(img),
        AugmentOp::Rotate => rotate(img, 3.0 * m),
        AugmentOp::Solarize => {
            let threshold = 256 - (25.5 * m).round() as u32;
            map_levels(img, |v| if v as u32 >= threshold { 255 - v } else { v })
        }
        AugmentOp::Color => blend(img, &grayscale(img), factor),
        AugmentOp::Posterize => {
            let bits = 8 - (0.4 * m).round() as u32;
            let mask = (0xffu32 << (8 - bits)) as u8;
            map_levels(img, |v| v & mask)
        }
        AugmentOp::Contrast => {
            let g = grayscale(img);
            let mean = g.pixels().iter().step_by(img.channels()).map(|&v| v as f64).sum::<f64>()
                / (img.height() * img.width()) as f64;
            let flat = ImageBuffer::filled(img.height(), img.width(), img.channels(), mean.round() as u8)
                .expect("same extents as a valid image");
            blend(img, &flat, factor)
        }
        AugmentOp::Brightness => {
            let black = ImageBuffer::filled(img.height(), img.width(), img.channels(), 0)
                .expect("same extents as a valid image");
            blend(img, &black, factor)
        }
        AugmentOp::Sharpness => blend(img, &smooth(img), factor),
        AugmentOp::ShearX => {
            let s = 0.03 * m;
            let cy = (img.height() as f64 - 1.0) / 2.0;
            remap(img, |y, x| (y, x + s * (y - cy)))
        }
        AugmentOp::ShearY => {
            let s = 0.03 * m;
            let cx = (img.width() as f64 - 1.0) / 2.0;
            remap(img, |y, x| (y + s * (x - cx), x))
        }
        AugmentOp::TranslateX => {
            let dx = (0.045 * m * img.width() as f64).round();
            remap(img, |y, x| (y, x - dx))
        }
        AugmentOp::TranslateY => {
            let dy = (0.045 * m * img.height() as f64).round();
            remap(img, |y, x| (y - dy, x))
        }
    })
}

fn map_levels(img: &ImageBuffer, f: impl Fn(u8) -> u8) -> ImageBuffer {
    img.with_pixels(img.pixels().iter().map(|&v| f(v)).collect())
}

/// `degenerate + factor · (img − degenerate)`, clamped to `[0, 255]`.
fn blend(img: &ImageBuffer, degenerate: &ImageBuffer, factor: f64) -> ImageBuffer {
    let px = img
        .pixels()
        .iter()
        .zip(degenerate.pixels())
        .map(|(&a, &d)| {
            let (a, d) = (a as f64, d as f64);
            (d + factor * (a - d)).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    img.with_pixels(px)
}

/// Luma (ITU-R 601) replicated into every channel.
fn grayscale(img: &ImageBuffer) -> ImageBuffer {
    let c = img.channels();
    if c != 3 {
        return img.clone();
    }
    let mut px = Vec::with_capacity(img.pixels().len());
    for rgb in img.pixels().chunks_exact(3) {
        let l = (0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64).round() as u8;
        px.extend_from_slice(&[l, l, l]);
    }
    img.with_pixels(px)
}

/// 3×3 smoothing with centre weight 5 of 13; the border is kept as is.
fn smooth(img: &ImageBuffer) -> ImageBuffer {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut px = img.pixels().to_vec();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            for ch in 0..c {
                let mut acc = 0u32;
                for dy in 0..3 {
                    for dx in 0..3 {
                        let wgt = if dy == 1 && dx == 1 { 5 } else { 1 };
                        acc += wgt * img.get(y + dy - 1, x + dx - 1, ch) as u32;
                    }
                }
                px[(y * w + x) * c + ch] = ((acc as f64) / 13.0).round() as u8;
            }
        }
    }
    img.with_pixels(px)
}

fn auto_contrast(img: &ImageBuffer) -> ImageBuffer {
    let c = img.channels();
    let mut px = img.pixels().to_vec();
    for ch in 0..c {
        let levels = img.pixels().iter().skip(ch).step_by(c);
        let (lo, hi) = levels.fold((255u8, 0u8), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if hi <= lo {
            continue;
        }
        let scale = 255.0 / (hi - lo) as f64;
        for v in px.iter_mut().skip(ch).step_by(c) {
            *v = ((*v - lo) as f64 * scale).round() as u8;
        }
    }
    img.with_pixels(px)
}

/// Per-channel histogram equalization (cumulative-histogram lookup).
fn equalize(img: &ImageBuffer) -> ImageBuffer {
    let c = img.channels();
    let mut px = img.pixels().to_vec();
    for ch in 0..c {
        let mut hist = [0usize; 256];
        for &v in img.pixels().iter().skip(ch).step_by(c) {
            hist[v as usize] += 1;
        }
        let total: usize = hist.iter().sum();
        let last = hist.iter().rev().find(|&&n| n > 0).copied().unwrap_or(0);
        let step = (total - last) / 255;
        if step == 0 {
            continue;
        }
        let mut lut = [0u8; 256];
        let mut cum = step / 2;
        for (level, &n) in hist.iter().enumerate() {
            lut[level] = (cum / step).min(255) as u8;
            cum += n;
        }
        for v in px.iter_mut().skip(ch).step_by(c) {
            *v = lut[*v as usize];
        }
    }
    img.with_pixels(px)
}

fn rotate(img: &ImageBuffer, degrees: f64) -> ImageBuffer {
    if degrees == 0.0 {
        return img.clone();
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (img.height() as f64 - 1.0) / 2.0;
    let cx = (img.width() as f64 - 1.0) / 2.0;
    // inverse map: rotate each output coordinate back onto the source
    remap(img, |y, x| {
        let (dy, dx) = (y - cy, x - cx);
        (cy + cos * dy - sin * dx, cx + sin * dy + cos * dx)
    })
}

/// Nearest-neighbour resampling with `src(y, x)` giving the source
/// coordinate of each output pixel; outside samples become [`FILL`].
fn remap(img: &ImageBuffer, src: impl Fn(f64, f64) -> (f64, f64)) -> ImageBuffer {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut px = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = src(y as f64, x as f64);
            let (sy, sx) = (sy.round(), sx.round());
            if sy >= 0.0 && sx >= 0.0 && (sy as usize) < h && (sx as usize) < w {
                px.extend_from_slice(img.pixel(sy as usize, sx as usize));
            } else {
                px.extend(std::iter::repeat_n(FILL, c));
            }
        }
    }
    img.with_pixels(px)
}

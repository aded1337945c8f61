//! 8-bit raster images, bilinear resampling, and PNM output.

use std::path::Path;

use image::ImageEncoder;

use crate::error::{Error, Result};

/// Row-major interleaved 8-bit image, `pixels.len() == height * width * channels`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "image extents must be positive, got {height}x{width}x{channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image needs {} bytes, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image by evaluating `f(y, x, c)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, pixels)
    }

    /// Decodes a PNG, JPEG or PNM file to 3-channel RGB.
    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::ingestion(path, e.to_string()))?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(h as usize, w as usize, 3, rgb.into_raw())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[u8] {
        let at = (y * self.width + x) * self.channels;
        &self.pixels[at..at + self.channels]
    }

    /// Same extents, new samples.
    pub(crate) fn with_pixels(&self, pixels: Vec<u8>) -> Self {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        Self {
            pixels,
            ..*self
        }
    }

    /// Bilinear resize to `height x width`, rounding to the nearest level.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let src: Vec<f64> = self.pixels.iter().map(|&p| p as f64).collect();
        let out = bilinear_resize(&src, self.height, self.width, self.channels, height, width)?;
        let pixels = out.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        Self::new(height, width, self.channels, pixels)
    }

    /// Binary PPM (P6) for 3 channels, PGM (P5) for 1.
    pub fn to_pnm(&self) -> Result<Vec<u8>> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(Error::Shape(format!("PNM needs 1 or 3 channels, got {c}"))),
        };
        let mut bytes = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        bytes.extend_from_slice(&self.pixels);
        Ok(bytes)
    }

    pub fn save_pnm(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, &self.to_pnm()?)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => return Err(Error::Shape(format!("PNG output needs 1 or 3 channels, got {c}"))),
        };
        let mut bytes = Vec::new();
        image::codecs::png::PngEncoder::new(&mut bytes)
            .write_image(&self.pixels, self.width as u32, self.height as u32, color)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        crate::fsutil::write_atomic(path, &bytes)
    }
}

/// Bilinear interpolation of an interleaved `[h, w, c]` grid to `[oh, ow, c]`
/// with half-pixel centres and edge clamping.
pub fn bilinear_resize(
    src: &[f64],
    h: usize,
    w: usize,
    c: usize,
    oh: usize,
    ow: usize,
) -> Result<Vec<f64>> {
    if h == 0 || w == 0 || c == 0 || oh == 0 || ow == 0 {
        return Err(Error::Shape(format!(
            "cannot resample {h}x{w}x{c} to {oh}x{ow}"
        )));
    }
    if src.len() != h * w * c {
        return Err(Error::Shape(format!(
            "{h}x{w}x{c} grid needs {} values, got {}",
            h * w * c,
            src.len()
        )));
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = taps(oh, h);
    let xs = taps(ow, w);
    let mut out = Vec::with_capacity(oh * ow * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let at = |y: usize, x: usize| src[(y * w + x) * c + ch];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(out)
}

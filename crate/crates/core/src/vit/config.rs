use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of a ViT.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViTConfig {
    pub patch_size: usize,
    pub layers: usize,
    pub hidden_size: usize,
    pub mlp_size: usize,
    pub heads: usize,
    pub num_classes: usize,
    /// Side length of the square input image.
    pub image_resolution: usize,
    pub channels: usize,
}

/// Published model sizes plus a desk-scale configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Tiny,
    Base16,
    Large16,
    Huge14,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Tiny, Variant::Base16, Variant::Large16, Variant::Huge14];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tiny => "tiny",
            Variant::Base16 => "base16",
            Variant::Large16 => "large16",
            Variant::Huge14 => "huge14",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tiny" => Ok(Variant::Tiny),
            "base16" => Ok(Variant::Base16),
            "large16" => Ok(Variant::Large16),
            "huge14" => Ok(Variant::Huge14),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected tiny, base16, large16 or huge14)"
            ))),
        }
    }
}

/// Configuration for a named variant.
///
/// The three published sizes default to a 224-pixel input and a 1000-way
/// head; `Tiny` is a 32-pixel, 4-way model small enough for unit tests.
pub fn preset_config(variant: Variant) -> ViTConfig {
    let (patch_size, layers, hidden_size, mlp_size, heads) = match variant {
        Variant::Base16 => (16, 12, 768, 3072, 12),
        Variant::Large16 => (16, 24, 1024, 4096, 16),
        Variant::Huge14 => (14, 32, 1280, 5120, 16),
        Variant::Tiny => (4, 2, 64, 128, 4),
    };
    let (image_resolution, num_classes) = match variant {
        Variant::Tiny => (32, 4),
        _ => (224, 1000),
    };
    ViTConfig {
        patch_size,
        layers,
        hidden_size,
        mlp_size,
        heads,
        num_classes,
        image_resolution,
        channels: 3,
    }
}

impl ViTConfig {
    pub fn with_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }

    pub fn with_resolution(mut self, image_resolution: usize) -> Self {
        self.image_resolution = image_resolution;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("patch_size", self.patch_size),
            ("layers", self.layers),
            ("hidden_size", self.hidden_size),
            ("mlp_size", self.mlp_size),
            ("heads", self.heads),
            ("num_classes", self.num_classes),
            ("image_resolution", self.image_resolution),
            ("channels", self.channels),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.image_resolution % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "resolution {} is not a multiple of patch size {}",
                self.image_resolution, self.patch_size
            )));
        }
        if self.hidden_size % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden_size, self.heads
            )));
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid_side(&self) -> usize {
        self.image_resolution / self.patch_size
    }

    /// Patch count `N = HW / P²`.
    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    /// Tokens per image: patches plus the class token.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }

    /// Flattened patch width `P²·C`.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.heads
    }
}

/// Closed-form parameter total for `config`, matching
/// [`ViTModel::new`](super::ViTModel::new) without allocating anything.
pub fn parameter_count(config: &ViTConfig) -> u64 {
    let d = config.hidden_size as u64;
    let m = config.mlp_size as u64;
    let k = config.num_classes as u64;
    let embed = config.patch_dim() as u64 * d + d // projection
        + d // class token
        + config.seq_len() as u64 * d; // position embeddings
    let per_layer = 2 * d // norm1
        + 4 * (d * d + d) // q, k, v, out
        + 2 * d // norm2
        + (d * m + m)
        + (m * d + d);
    let head = 2 * d + d * k + k; // final norm + classifier
    embed + config.layers as u64 * per_layer + head
}

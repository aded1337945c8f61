//! Grad-CAM on token activations of the last encoder block.
//!
//! The default site is the normalized input of the final attention
//! sublayer. Later in that block every patch token only passes through
//! per-token layers that never reach the class token, so gradients at the
//! attention output (before or after the residual add) vanish on all patch
//! rows and the map is identically zero.
//!
//! The class token is dropped and the remaining `N` patch tokens are laid
//! out in raster order on the `√N × √N` patch grid. Each of the `D`
//! embedding dimensions is one channel.

use std::path::Path;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::image::{bilinear_resize, ImageBuffer};
use crate::tensor::Tensor;
use crate::vit::{ActivationSite, Probe, ViTModel};

/// Activations `A` and `∂Y_c/∂A` at the tapped site, both `[N+1, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CamTarget {
    pub activations: Tensor,
    pub gradients: Tensor,
    pub class: usize,
}

impl CamTarget {
    /// Rows `1..=N`, without the class token.
    pub fn patch_activations(&self) -> Result<Tensor> {
        drop_first_row(&self.activations)
    }

    pub fn patch_gradients(&self) -> Result<Tensor> {
        drop_first_row(&self.gradients)
    }
}

fn drop_first_row(t: &Tensor) -> Result<Tensor> {
    let (rows, d) = (t.shape()[0], t.shape()[1]);
    if rows < 2 {
        return Err(Error::Shape(format!("need at least two token rows, got {rows}")));
    }
    Tensor::from_vec([rows - 1, d], t.data()[d..].to_vec())
}

/// One forward pass tapping `site` in the final block and one backward pass
/// from the logit of `class`.
pub fn capture_target(
    model: &ViTModel,
    image: &Tensor,
    class: usize,
    site: ActivationSite,
) -> Result<CamTarget> {
    let cfg = model.config();
    if class >= cfg.num_classes {
        return Err(Error::Index(format!(
            "class {class} out of range for {} classes",
            cfg.num_classes
        )));
    }
    let batch = match image.rank() {
        3 => {
            let s = image.shape();
            image.reshape([1, s[0], s[1], s[2]])?
        }
        4 if image.shape()[0] == 1 => image.clone(),
        _ => {
            return Err(Error::Shape(format!(
                "expected one [H, W, C] image, got {:?}",
                image.shape()
            )))
        }
    };
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let x = tape.constant(batch);
    let probe = Probe {
        layer: cfg.layers - 1,
        site,
        offset: None,
    };
    let out = model.forward_on(&mut tape, &bound, x, Some(&probe))?;
    let y = tape.narrow(out.logits, 1, class, 1)?;
    let y = tape.sum(y);
    tape.backward(y)?;
    let probed = out.probed.expect("probe layer is in range");
    let shape = [cfg.seq_len(), cfg.hidden_size];
    let activations = tape.value(probed).reshape(shape)?.with_requires_grad(false);
    let grad = tape
        .grad(probed)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; shape[0] * shape[1]]);
    Ok(CamTarget {
        activations,
        gradients: Tensor::from_vec(shape, grad)?,
        class,
    })
}

fn check_grid(t: &Tensor, grid: (usize, usize), what: &str) -> Result<()> {
    if t.rank() != 2 || t.shape()[0] != grid.0 * grid.1 {
        return Err(Error::Shape(format!(
            "{what} of shape {:?} do not fill a {}x{} grid",
            t.shape(),
            grid.0,
            grid.1
        )));
    }
    Ok(())
}

/// `w_k = mean over grid cells of ∂Y/∂A_k`; `gradients` is `[h·w, D]`.
pub fn channel_weights(gradients: &Tensor, grid: (usize, usize)) -> Result<Vec<f64>> {
    check_grid(gradients, grid, "gradients")?;
    let (n, d) = (gradients.shape()[0], gradients.shape()[1]);
    let mut w = vec![0.0; d];
    for i in 0..n {
        for (acc, g) in w.iter_mut().zip(gradients.row(i)) {
            *acc += g;
        }
    }
    w.iter_mut().for_each(|v| *v /= n as f64);
    Ok(w)
}

/// `ReLU(Σ_k w_k A_k)` per grid cell, before normalization.
pub fn cam_raw(weights: &[f64], activations: &Tensor, grid: (usize, usize)) -> Result<Vec<f64>> {
    check_grid(activations, grid, "activations")?;
    if activations.shape()[1] != weights.len() {
        return Err(Error::Shape(format!(
            "{} channel weights for {} activation channels",
            weights.len(),
            activations.shape()[1]
        )));
    }
    Ok((0..activations.shape()[0])
        .map(|i| {
            let s: f64 = activations.row(i).iter().zip(weights).map(|(a, w)| a * w).sum();
            s.max(0.0)
        })
        .collect())
}

/// A `[0, 1]` map over the patch grid.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatMap {
    pub height: usize,
    pub width: usize,
    /// Row-major.
    pub values: Vec<f64>,
    /// Side length of the model input the grid covers.
    pub source_resolution: usize,
}

impl HeatMap {
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// 8-bit grayscale at grid resolution.
    pub fn to_image(&self) -> ImageBuffer {
        let px = self.values.iter().map(|v| (v * 255.0).round() as u8).collect();
        ImageBuffer::new(self.height, self.width, 1, px).expect("grid extents are positive")
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        self.to_image().save_pnm(path)
    }
}

/// Min-max normalized [`cam_raw`]. A map that is identically zero stays zero;
/// a constant positive map becomes all ones.
pub fn cam_map(weights: &[f64], activations: &Tensor, grid: (usize, usize)) -> Result<HeatMap> {
    let raw = cam_raw(weights, activations, grid)?;
    Ok(HeatMap {
        height: grid.0,
        width: grid.1,
        values: min_max(&raw),
        source_resolution: 0,
    })
}

fn min_max(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= 0.0 {
        vec![0.0; raw.len()]
    } else if hi == lo {
        vec![1.0; raw.len()]
    } else {
        raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
    }
}

/// Full pipeline for one `[H, W, C]` (or `[1, H, W, C]`) input. With no
/// class given, the model's top prediction is explained. Returns the map and
/// the explained class.
pub fn grad_cam(
    model: &ViTModel,
    image: &Tensor,
    class: Option<usize>,
    site: ActivationSite,
) -> Result<(HeatMap, usize)> {
    let class = match class {
        Some(c) => c,
        None => {
            let input = if image.rank() == 3 {
                let s = image.shape();
                image.reshape([1, s[0], s[1], s[2]])?
            } else {
                image.clone()
            };
            model.forward(&input)?.argmax_rows()[0]
        }
    };
    let target = capture_target(model, image, class, site)?;
    let side = model.config().grid_side();
    let grid = (side, side);
    let weights = channel_weights(&target.patch_gradients()?, grid)?;
    let mut map = cam_map(&weights, &target.patch_activations()?, grid)?;
    map.source_resolution = model.config().image_resolution;
    Ok((map, class))
}

/// Colour stops of the overlay ramp: blue, cyan, green, yellow, red at
/// 0, ¼, ½, ¾, 1.
pub const RAMP: [[u8; 3]; 5] = [[0, 0, 255], [0, 255, 255], [0, 255, 0], [255, 255, 0], [255, 0, 0]];

pub fn ramp_color(v: f64) -> [f64; 3] {
    let t = v.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    std::array::from_fn(|c| RAMP[i][c] as f64 * (1.0 - f) + RAMP[i + 1][c] as f64 * f)
}

/// Upsamples `map` bilinearly to the image size, colours it with [`RAMP`]
/// and blends `alpha · colour + (1 − alpha) · image`.
pub fn render_overlay(map: &HeatMap, image: &ImageBuffer, alpha: f64) -> Result<ImageBuffer> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if image.channels() != 3 {
        return Err(Error::Shape(format!("overlay needs an RGB image, got {} channels", image.channels())));
    }
    if alpha == 0.0 {
        return Ok(image.clone());
    }
    let (h, w) = (image.height(), image.width());
    let up = bilinear_resize(&map.values, map.height, map.width, 1, h, w)?;
    let mut px = Vec::with_capacity(h * w * 3);
    for (i, &v) in up.iter().enumerate() {
        let color = ramp_color(v);
        for (c, &cv) in color.iter().enumerate() {
            let base = image.pixels()[i * 3 + c] as f64;
            px.push((alpha * cv + (1.0 - alpha) * base).round().clamp(0.0, 255.0) as u8);
        }
    }
    ImageBuffer::new(h, w, 3, px)
}

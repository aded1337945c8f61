//! Image ↔ patch-row conversion.
//!
//! Patches are emitted in raster order over the patch grid; inside a patch
//! the row holds its pixels in raster order with channels innermost.

use crate::autodiff::ops_support::permute_data;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_divisible(h: usize, w: usize, p: usize) -> Result<()> {
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Shape(format!(
            "image {h}x{w} is not divisible into {p}x{p} patches"
        )));
    }
    Ok(())
}

/// `[H, W, C]` image → `[N, P²·C]` patch rows, `N = HW/P²`.
pub fn patchify(image: &Tensor, patch: usize) -> Result<Tensor> {
    let &[h, w, c] = image.shape() else {
        return Err(Error::Shape(format!(
            "patchify expects an [H, W, C] image, got {:?}",
            image.shape()
        )));
    };
    check_divisible(h, w, patch)?;
    let (gh, gw) = (h / patch, w / patch);
    let data = permute_data(image.data(), &[gh, patch, gw, patch, c], &[0, 2, 1, 3, 4]);
    Tensor::from_vec([gh * gw, patch * patch * c], data)
}

/// Inverse of [`patchify`] for an `height × width` image.
pub fn unpatchify(patches: &Tensor, patch: usize, height: usize, width: usize) -> Result<Tensor> {
    check_divisible(height, width, patch)?;
    let (gh, gw) = (height / patch, width / patch);
    let &[n, row] = patches.shape() else {
        return Err(Error::Shape(format!(
            "unpatchify expects [N, P²C] rows, got {:?}",
            patches.shape()
        )));
    };
    if n != gh * gw || row % (patch * patch) != 0 {
        return Err(Error::Shape(format!(
            "{n}x{row} patch rows do not tile a {height}x{width} image with patch {patch}"
        )));
    }
    let c = row / (patch * patch);
    let data = permute_data(patches.data(), &[gh, gw, patch, patch, c], &[0, 2, 1, 3, 4]);
    Tensor::from_vec([height, width, c], data)
}

/// Recorded patchify of a `[B, H, W, C]` batch into `[B, N, P²·C]`.
pub fn patchify_on(tape: &mut Tape, batch: Var, patch: usize) -> Result<Var> {
    let &[b, h, w, c] = tape.shape(batch) else {
        return Err(Error::Shape(format!(
            "expected a [B, H, W, C] batch, got {:?}",
            tape.shape(batch)
        )));
    };
    check_divisible(h, w, patch)?;
    let (gh, gw) = (h / patch, w / patch);
    let split = tape.reshape(batch, &[b, gh, patch, gw, patch, c])?;
    let grouped = tape.permute(split, &[0, 1, 3, 2, 4, 5])?;
    tape.reshape(grouped, &[b, gh * gw, patch * patch * c])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, c: usize) -> Tensor {
        Tensor::from_vec([h, w, c], (0..h * w * c).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn shapes() {
        assert_eq!(patchify(&ramp(16, 16, 3), 16).unwrap().shape(), &[1, 768]);
        assert_eq!(patchify(&ramp(224, 224, 3), 16).unwrap().shape(), &[196, 768]);
        assert!(matches!(patchify(&ramp(10, 16, 3), 4), Err(Error::Shape(_))));
    }

    #[test]
    fn large_source_resolution() {
        let big = Tensor::zeros([1024, 1024, 3]);
        assert_eq!(patchify(&big, 16).unwrap().shape(), &[4096, 768]);
    }

    #[test]
    fn ordering_is_raster_with_channels_innermost() {
        // 4x4 single channel, P=2: patch 0 is rows 0-1, cols 0-1.
        let img = ramp(4, 4, 1);
        let p = patchify(&img, 2).unwrap();
        assert_eq!(p.row(0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(p.row(1), &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(p.row(2), &[8.0, 9.0, 12.0, 13.0]);

        let rgb = ramp(2, 2, 3);
        let p = patchify(&rgb, 2).unwrap();
        assert_eq!(p.row(0), rgb.data());
    }

    #[test]
    fn tape_version_matches_pure() {
        let img = ramp(8, 8, 3);
        let batch = img.reshape([1, 8, 8, 3]).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(batch);
        let rows = patchify_on(&mut tape, v, 4).unwrap();
        let pure = patchify(&img, 4).unwrap();
        assert_eq!(tape.value(rows).data(), pure.data());
    }

    #[test]
    fn reassembly_is_exact() {
        let img = ramp(12, 8, 3);
        let back = unpatchify(&patchify(&img, 4).unwrap(), 4, 12, 8).unwrap();
        assert_eq!(back, img);
    }
}

//! Patchifies an image, embeds it, and adapts position embeddings to a new
//! resolution.

use vitkit::vit::{names, patchify, preset_config, unpatchify, Variant, ViTModel};
use vitkit::weights::interpolate_position_embeddings;
use vitkit::Tensor;

fn main() -> vitkit::Result<()> {
    let cfg = preset_config(Variant::Tiny);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let img = Tensor::uniform([32, 32, 3], -1.0, 1.0, &mut rng);

    let patches = patchify(&img, cfg.patch_size)?;
    println!("image {:?} -> patches {:?}", img.shape(), patches.shape());
    assert_eq!(unpatchify(&patches, cfg.patch_size, 32, 32)?, img);

    let model = ViTModel::new(cfg, 0)?;
    let tokens = model.embed(&patches)?;
    println!("tokens (class token first) {:?}", tokens.shape());

    let pos = model.param(names::POS).expect("model has position embeddings");
    let at_64px = interpolate_position_embeddings(pos, 16 * 16 + 1)?;
    println!("position embeddings {:?} -> {:?} for a 64px input", pos.shape(), at_64px.shape());
    Ok(())
}

//! Trains a Tiny model briefly and renders a Grad-CAM overlay.

use vitkit::dataset::{preprocess, InMemoryDataset};
use vitkit::gradcam::{grad_cam, render_overlay};
use vitkit::train::{train, HyperParams};
use vitkit::vit::{preset_config, ActivationSite, Variant, ViTModel};

fn main() -> vitkit::Result<()> {
    let data = InMemoryDataset::synthetic(4, 8, 32, 11);
    let hp = HyperParams {
        epochs: 15,
        batch_size: 8,
        ..Default::default()
    };
    let model = train(&ViTModel::new(preset_config(Variant::Tiny), 0)?, &data, &data, &hp, None)?.best;

    let image = &data.images[1];
    let (map, class) = grad_cam(&model, &preprocess(image, 32)?, None, ActivationSite::default())?;
    println!("explaining class {class} (true {})", data.labels[1]);
    for y in 0..map.height {
        let row: String = map.values[y * map.width..(y + 1) * map.width]
            .iter()
            .map(|v| [' ', '.', ':', '*', '#'][(v * 4.0).round() as usize])
            .collect();
        println!("|{row}|");
    }
    let out = std::env::temp_dir();
    map.save_pgm(&out.join("vitkit_heatmap.pgm"))?;
    render_overlay(&map, &image.resize(256, 256)?, 0.5)?.save_pnm(&out.join("vitkit_overlay.ppm"))?;
    println!("wrote vitkit_heatmap.pgm and vitkit_overlay.ppm to {}", out.display());
    Ok(())
}

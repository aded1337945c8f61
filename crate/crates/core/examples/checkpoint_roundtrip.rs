//! Saves a model to the archive format, reloads it and checks the bytes.

use vitkit::vit::{preset_config, Variant, ViTModel};
use vitkit::weights::{model_from_archive, NamedTensorArchive};

fn main() -> vitkit::Result<()> {
    let model = ViTModel::new(preset_config(Variant::Tiny), 5)?;
    let dir = std::env::temp_dir();
    let path = dir.join("vitkit_example.vitw");
    NamedTensorArchive::from_model(&model).save(&path)?;

    let archive = NamedTensorArchive::load(&path)?;
    for e in archive.entries().iter().take(4) {
        println!("{:<20} {:?}", e.name, e.shape);
    }
    println!("... {} entries, {} bytes", archive.len(), archive.to_bytes().len());

    let restored = model_from_archive(&archive, preset_config(Variant::Tiny))?;
    let again = NamedTensorArchive::from_model(&restored).to_bytes();
    println!("re-save byte-identical: {}", again == std::fs::read(&path).expect("just written"));
    Ok(())
}

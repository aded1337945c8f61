//! Saves a "pretrained" 1000-class model at 16px, then imports it into a
//! 4-class 32px model: the head is replaced and position embeddings are
//! interpolated. The imported model is fine-tuned briefly.

use vitkit::dataset::InMemoryDataset;
use vitkit::train::{evaluate, train, HyperParams};
use vitkit::vit::{preset_config, Variant, ViTModel};
use vitkit::weights::{import_pretrained, NamedTensorArchive};

fn main() -> vitkit::Result<()> {
    let source_cfg = preset_config(Variant::Tiny).with_classes(1000).with_resolution(16);
    let pretrained = ViTModel::new(source_cfg, 1)?;
    let archive = NamedTensorArchive::from_model(&pretrained);

    let target = ViTModel::new(preset_config(Variant::Tiny), 2)?;
    let (model, report) = import_pretrained(&archive, &target, false)?;
    println!("{}", report.summary());

    let data = InMemoryDataset::synthetic(4, 8, 32, 3);
    let hp = HyperParams {
        epochs: 10,
        batch_size: 8,
        ..Default::default()
    };
    let out = train(&model, &data, &data, &hp, None)?;
    let (acc, loss) = evaluate(&out.best, &data, 32)?;
    println!("after fine-tuning: accuracy {acc:.3}, loss {loss:.4}");
    Ok(())
}

//! Overfits the Tiny preset on a small synthetic 4-class set.

use std::time::Instant;

use vitkit::dataset::InMemoryDataset;
use vitkit::train::{evaluate, train, HyperParams};
use vitkit::vit::{preset_config, Variant, ViTModel};

fn main() -> vitkit::Result<()> {
    let data = InMemoryDataset::synthetic(4, 8, 32, 7);
    let model = ViTModel::new(preset_config(Variant::Tiny), 7)?;
    let (acc0, loss0) = evaluate(&model, &data, 32)?;
    let hp = HyperParams {
        epochs: 50,
        batch_size: 8,
        lr: 0.03,
        seed: 7,
        ..Default::default()
    };
    let t = Instant::now();
    let out = train(&model, &data, &data, &hp, None)?;
    let (acc, loss) = evaluate(&out.last, &data, 32)?;
    for m in out.report.history.iter().step_by(5) {
        println!("epoch {:>2}  loss {:.4}  acc {:.3}", m.epoch, m.train_loss, m.train_acc);
    }
    println!(
        "{} steps in {:.1}s: loss {loss0:.4} -> {loss:.4}, accuracy {acc0:.3} -> {acc:.3}",
        out.report.steps,
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

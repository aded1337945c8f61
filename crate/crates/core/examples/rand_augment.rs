//! Applies every catalog op at full magnitude, then a few RandAugment draws.

use vitkit::augment::{apply_op, catalog, rand_augment, sample_ops, AugmentPolicy};
use vitkit::dataset::InMemoryDataset;

fn main() -> vitkit::Result<()> {
    let img = InMemoryDataset::synthetic(1, 1, 32, 5).images.remove(0);
    let out = std::env::temp_dir().join("vitkit_rand_augment");
    std::fs::create_dir_all(&out).expect("temp dir is writable");
    for op in catalog() {
        let changed = apply_op(&img, *op, 10)?;
        let diff = img.pixels().iter().zip(changed.pixels()).filter(|(a, b)| a != b).count();
        println!("{op:>13}: {diff:>4} of {} samples changed", img.pixels().len());
        changed.save_pnm(&out.join(format!("{op}.ppm")))?;
    }
    let policy = AugmentPolicy::new(2, 9, 42)?;
    for draw in 0..4 {
        let ops: Vec<String> = sample_ops(&policy, draw).iter().map(|o| o.to_string()).collect();
        rand_augment(&img, &policy, draw)?.save_pnm(&out.join(format!("draw_{draw}.ppm")))?;
        println!("draw {draw}: {}", ops.join(" -> "));
    }
    println!("images written to {}", out.display());
    Ok(())
}

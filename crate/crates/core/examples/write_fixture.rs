//! Writes a synthetic image tree for trying the CLI:
//! `cargo run --example write_fixture -- <dir> [per_class]`.

use std::path::PathBuf;

use vitkit::dataset::InMemoryDataset;

fn main() -> vitkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "fixture".into()));
    let per_class = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    InMemoryDataset::synthetic(4, per_class, 32, 0).write_tree(&dir)?;
    println!("wrote {} images under {}", 4 * per_class, dir.display());
    Ok(())
}

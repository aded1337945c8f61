//! Writes a synthetic class-per-directory tree, scans it and splits it 80/10/10.

use vitkit::dataset::{scan_dataset, split, InMemoryDataset, SplitSpec};

fn main() -> vitkit::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| vitkit::Error::Io {
        path: std::env::temp_dir(),
        source: e,
    })?;
    InMemoryDataset::synthetic(4, 10, 32, 1).write_tree(dir.path())?;
    std::fs::write(dir.path().join("class_0").join("notes.txt"), "not an image").unwrap();

    let manifest = scan_dataset(dir.path())?;
    println!(
        "{} images, labels {:?}, {} skipped",
        manifest.entries.len(),
        manifest.labels,
        manifest.skipped
    );
    let (train, val, test) = split(&manifest, &SplitSpec::standard(42))?;
    println!(
        "train {} / val {} / test {}",
        train.entries.len(),
        val.entries.len(),
        test.entries.len()
    );
    print!("{}", test.to_tsv());
    Ok(())
}

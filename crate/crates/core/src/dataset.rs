//! Labeled image collections: directory ingestion, stratified splitting,
//! manifest files and batch loading.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{rand_augment, AugmentPolicy};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::seed::derive_seed;
use crate::tensor::Tensor;

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];
pub const NORM_MEAN: f64 = 0.5;
pub const NORM_STD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    /// Path relative to the manifest root, `/`-separated.
    pub path: String,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub labels: Vec<String>,
    pub entries: Vec<Entry>,
    /// Non-image files ignored during the scan.
    pub skipped: usize,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Reads `<root>/<class>/*.{png,jpg,jpeg}`. Class names are the sorted
/// subdirectory names; entries are sorted by relative path.
pub fn scan_dataset(root: &Path) -> Result<DatasetManifest> {
    let read = |dir: &Path| -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for item in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            out.push(item.map_err(|e| Error::io(dir, e))?.path());
        }
        out.sort();
        Ok(out)
    };
    let mut labels = Vec::new();
    let mut entries = Vec::new();
    let mut skipped = 0;
    for class_dir in read(root)?.into_iter().filter(|p| p.is_dir()) {
        let name = class_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::ingestion(&class_dir, "class directory name is not UTF-8"))?
            .to_string();
        let label = labels.len();
        let mut found = 0;
        for file in read(&class_dir)? {
            if !file.is_file() || !is_image(&file) {
                skipped += 1;
                continue;
            }
            let fname = file
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::ingestion(&file, "file name is not UTF-8"))?;
            entries.push(Entry {
                path: format!("{name}/{fname}"),
                label,
            });
            found += 1;
        }
        if found == 0 {
            return Err(Error::ingestion(&class_dir, "class directory holds no images"));
        }
        labels.push(name);
    }
    if labels.is_empty() {
        return Err(Error::ingestion(root, "no class directories found"));
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} non-image file(s) under {}", root.display());
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        labels,
        entries,
        skipped,
    })
}

impl DatasetManifest {
    /// Tab-separated form: a comma-separated label header, then one
    /// `path<TAB>label` line per entry.
    pub fn to_tsv(&self) -> String {
        let mut s = self.labels.join(",");
        s.push('\n');
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\n", e.path, e.label));
        }
        s
    }

    pub fn from_tsv(text: &str, root: &Path) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::ingestion(root, format!("manifest line {line}: {msg}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "missing label header".into()))?;
        let labels: Vec<String> = header.split(',').map(str::to_string).collect();
        if labels.iter().any(|l| l.is_empty()) {
            return Err(bad(1, "empty label name".into()));
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            let (path, label) = line
                .split_once('\t')
                .ok_or_else(|| bad(i + 2, "expected path<TAB>label".into()))?;
            let label: usize = label
                .parse()
                .map_err(|_| bad(i + 2, format!("bad label index {label:?}")))?;
            if label >= labels.len() {
                return Err(bad(i + 2, format!("label {label} outside vocabulary of {}", labels.len())));
            }
            entries.push(Entry {
                path: path.to_string(),
                label,
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            labels,
            entries,
            skipped: 0,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, self.to_tsv().as_bytes())
    }

    /// Reads a manifest file; entry paths resolve against `root`.
    pub fn load(path: &Path, root: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, root)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.labels.len()];
        for e in &self.entries {
            counts[e.label] += 1;
        }
        counts
    }

    fn with_entries(&self, mut entries: Vec<Entry>) -> Self {
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        Self {
            root: self.root.clone(),
            labels: self.labels.clone(),
            entries,
            skipped: 0,
        }
    }
}

/// Exact non-negative rational.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 {
            return Err(Error::Config("fraction with zero denominator".into()));
        }
        Ok(Self { num, den })
    }

    /// `floor(self · n)`.
    pub fn floor_of(self, n: usize) -> usize {
        (self.num as u128 * n as u128 / self.den as u128) as usize
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl FromStr for Fraction {
    type Err = Error;

    /// Parses a decimal such as `0.8` or `1` exactly.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid fraction {s:?}"));
        let (int, frac) = s.trim().split_once('.').unwrap_or((s.trim(), ""));
        if int.is_empty() && frac.is_empty() || frac.len() > 18 {
            return Err(bad());
        }
        let digits = |t: &str| -> Result<u64> {
            if t.is_empty() {
                Ok(0)
            } else if t.bytes().all(|b| b.is_ascii_digit()) {
                t.parse().map_err(|_| bad())
            } else {
                Err(bad())
            }
        };
        let den = 10u64.pow(frac.len() as u32);
        let num = digits(int)?
            .checked_mul(den)
            .and_then(|v| v.checked_add(digits(frac).ok()?))
            .ok_or_else(bad)?;
        Fraction::new(num, den)
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// `(train, val, test)`.
    pub fractions: [Fraction; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(fractions: [Fraction; 3], seed: u64) -> Result<Self> {
        let spec = Self { fractions, seed };
        spec.validate()?;
        Ok(spec)
    }

    /// 80 / 10 / 10.
    pub fn standard(seed: u64) -> Self {
        let f = |n| Fraction { num: n, den: 10 };
        Self {
            fractions: [f(8), f(1), f(1)],
            seed,
        }
    }

    /// Parses `"0.8,0.1,0.1"`.
    pub fn parse(fractions: &str, seed: u64) -> Result<Self> {
        let parts: Vec<Fraction> = fractions.split(',').map(str::parse).collect::<Result<_>>()?;
        let fractions: [Fraction; 3] = parts
            .try_into()
            .map_err(|_| Error::Config(format!("expected three fractions, got {fractions:?}")))?;
        Self::new(fractions, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let common: u128 = self.fractions.iter().map(|f| f.den as u128).product();
        let total: u128 = self
            .fractions
            .iter()
            .map(|f| f.num as u128 * (common / f.den as u128))
            .sum();
        if total != common {
            let shown: Vec<String> = self.fractions.iter().map(|f| format!("{:.6}", f.as_f64())).collect();
            return Err(Error::Config(format!(
                "split fractions must sum to exactly 1, got {}",
                shown.join(" + ")
            )));
        }
        Ok(())
    }
}

/// Stratified split. Each class is shuffled with its own derived seed and
/// cut into `floor(f_train·c)`, `floor(f_val·c)` and the remainder.
pub fn split(
    manifest: &DatasetManifest,
    spec: &SplitSpec,
) -> Result<(DatasetManifest, DatasetManifest, DatasetManifest)> {
    spec.validate()?;
    let mut parts: [Vec<Entry>; 3] = Default::default();
    for (label, name) in manifest.labels.iter().enumerate() {
        let mut class: Vec<Entry> = manifest.entries.iter().filter(|e| e.label == label).cloned().collect();
        class.sort_by(|a, b| a.path.cmp(&b.path));
        if class.len() < 3 {
            return Err(Error::Split(format!(
                "class {name:?} has {} entries, at least 3 are needed",
                class.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "split", label as u64));
        class.shuffle(&mut rng);
        let c = class.len();
        let n_train = spec.fractions[0].floor_of(c);
        let n_val = spec.fractions[1].floor_of(c);
        let test = class.split_off(n_train + n_val);
        let val = class.split_off(n_train);
        parts[0].extend(class);
        parts[1].extend(val);
        parts[2].extend(test);
    }
    let [train, val, test] = parts;
    Ok((
        manifest.with_entries(train),
        manifest.with_entries(val),
        manifest.with_entries(test),
    ))
}

/// Random access to labeled images.
pub trait ImageSource {
    fn len(&self) -> usize;
    fn label(&self, index: usize) -> usize;
    fn image(&self, index: usize) -> Result<ImageBuffer>;
    fn label_names(&self) -> &[String];

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn num_classes(&self) -> usize {
        self.label_names().len()
    }
}

impl ImageSource for DatasetManifest {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn label(&self, index: usize) -> usize {
        self.entries[index].label
    }

    fn image(&self, index: usize) -> Result<ImageBuffer> {
        ImageBuffer::open(&self.root.join(&self.entries[index].path))
    }

    fn label_names(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InMemoryDataset {
    pub images: Vec<ImageBuffer>,
    pub labels: Vec<usize>,
    pub names: Vec<String>,
}

impl InMemoryDataset {
    pub fn new(images: Vec<ImageBuffer>, labels: Vec<usize>, names: Vec<String>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= names.len()) {
            return Err(Error::Index(format!("label {bad} outside {} classes", names.len())));
        }
        Ok(Self { images, labels, names })
    }

    /// `per_class` images of `classes` visually distinct classes. Each class
    /// has its own stripe frequency, orientation and base colour; per-image noise
    /// and phase shifts keep the samples distinct.
    pub fn synthetic(classes: usize, per_class: usize, resolution: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "synthetic", 0));
        let mut images = Vec::with_capacity(classes * per_class);
        let mut labels = Vec::with_capacity(classes * per_class);
        for i in 0..classes * per_class {
            let k = i % classes;
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let freq = 1.0 + k as f64;
            let angle = k as f64 * std::f64::consts::PI / classes as f64;
            let (s, c) = angle.sin_cos();
            let mut noise = |_: usize| rng.random_range(-20.0..20.0);
            let img = ImageBuffer::from_fn(resolution, resolution, 3, |y, x, ch| {
                let t = (x as f64 * c + y as f64 * s) / resolution as f64;
                let wave = (std::f64::consts::TAU * freq * t + phase).sin();
                // class k's base colour: the bits of k+1 switch channels to bright
                let bright = ((k + 1) >> ch) & 1 == 1;
                let base = if bright { 170.0 } else { 80.0 };
                (base + 50.0 * wave + noise(ch)).round().clamp(0.0, 255.0) as u8
            })
            .expect("positive extents");
            images.push(img);
            labels.push(k);
        }
        let names = (0..classes).map(|k| format!("class_{k}")).collect();
        Self { images, labels, names }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            names: self.names.clone(),
        }
    }

    /// Writes the images as `<root>/<class>/<index>.png`.
    pub fn write_tree(&self, root: &Path) -> Result<()> {
        for (i, (img, &label)) in self.images.iter().zip(&self.labels).enumerate() {
            let dir = root.join(&self.names[label]);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            img.save_png(&dir.join(format!("{i:05}.png")))?;
        }
        Ok(())
    }
}

impl ImageSource for InMemoryDataset {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn image(&self, index: usize) -> Result<ImageBuffer> {
        Ok(self.images[index].clone())
    }

    fn label_names(&self) -> &[String] {
        &self.names
    }
}

/// Augmentation applied while loading: sample `j` of the batch uses draw
/// index `first_draw + j`.
#[derive(Clone, Copy, Debug)]
pub struct BatchAugment<'a> {
    pub policy: &'a AugmentPolicy,
    pub first_draw: u64,
}

/// Decodes, optionally augments, resizes to `resolution²` and normalizes
/// `(v/255 − 0.5) / 0.5`. Returns `[B, R, R, 3]` and the labels.
pub fn load_batch(
    source: &dyn ImageSource,
    indices: &[usize],
    resolution: usize,
    augment: Option<BatchAugment<'_>>,
) -> Result<(Tensor, Vec<usize>)> {
    if resolution == 0 {
        return Err(Error::Config("resolution must be positive".into()));
    }
    if indices.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let per = resolution * resolution * 3;
    let mut data = Vec::with_capacity(indices.len() * per);
    let mut labels = Vec::with_capacity(indices.len());
    for (j, &i) in indices.iter().enumerate() {
        if i >= source.len() {
            return Err(Error::Index(format!("sample {i} outside dataset of {}", source.len())));
        }
        let mut img = source.image(i)?;
        if img.channels() != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {}", img.channels())));
        }
        if let Some(a) = augment {
            img = rand_augment(&img, a.policy, a.first_draw + j as u64)?;
        }
        data.extend(normalized_pixels(&img, resolution)?);
        labels.push(source.label(i));
    }
    let t = Tensor::from_vec([indices.len(), resolution, resolution, 3], data)?;
    Ok((t, labels))
}

fn normalized_pixels(img: &ImageBuffer, resolution: usize) -> Result<Vec<f64>> {
    let img = img.resize(resolution, resolution)?;
    Ok(img.pixels().iter().map(|&v| (v as f64 / 255.0 - NORM_MEAN) / NORM_STD).collect())
}

/// One image as a `[1, R, R, 3]` model input, normalized like [`load_batch`].
pub fn preprocess(img: &ImageBuffer, resolution: usize) -> Result<Tensor> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {}", img.channels())));
    }
    Tensor::from_vec([1, resolution, resolution, 3], normalized_pixels(img, resolution)?)
}

/// Paths of a manifest, for set comparisons.
pub fn path_set(m: &DatasetManifest) -> BTreeSet<&str> {
    m.entries.iter().map(|e| e.path.as_str()).collect()
}

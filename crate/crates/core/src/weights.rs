//! Named-tensor archive (`.vitw`) and pretrained-weight import.
//!
//! Layout, all integers unsigned 64-bit little-endian:
//!
//! ```text
//! magic     8 bytes  "VITW0001"
//! count     u64
//! per entry:
//!   name_len u64, name (UTF-8)
//!   rank     u64, extents (rank × u64)
//!   payload  product(extents) × f32 LE
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::bilinear_resize;
use crate::optim::ParamStore;
use crate::tensor::Tensor;
use crate::vit::{names, ViTConfig, ViTModel};

pub const MAGIC: &[u8; 8] = b"VITW0001";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl ArchiveEntry {
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_vec(self.shape.clone(), self.data.iter().map(|&v| v as f64).collect())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedTensorArchive {
    entries: Vec<ArchiveEntry>,
}

impl NamedTensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn format_version(&self) -> u32 {
        FORMAT_VERSION
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: &Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Config(format!("duplicate archive entry {name}")));
        }
        self.entries.push(ArchiveEntry {
            name,
            shape: tensor.shape().to_vec(),
            data: tensor.data().iter().map(|&v| v as f32).collect(),
        });
        Ok(())
    }

    pub fn from_params(params: &ParamStore) -> Self {
        let mut a = Self::new();
        for p in params.iter() {
            a.push(p.name.clone(), &p.tensor).expect("parameter names are unique");
        }
        a
    }

    pub fn from_model(model: &ViTModel) -> Self {
        Self::from_params(model.params())
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ArchiveEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        let u64le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u64).to_le_bytes());
        u64le(&mut out, self.entries.len());
        for e in &self.entries {
            u64le(&mut out, e.name.len());
            out.extend_from_slice(e.name.as_bytes());
            u64le(&mut out, e.shape.len());
            for &d in &e.shape {
                u64le(&mut out, d);
            }
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(magic), "VITW0001"),
            });
        }
        let count = r.u64("entry count")?;
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for i in 0..count {
            let at = r.pos;
            let len = r.len(&format!("name length of entry {i}"))?;
            let raw = r.take(len, "entry name")?.to_vec();
            let name = String::from_utf8(raw)
                .map_err(|_| r.error(at + 8, format!("entry {i} name is not UTF-8")))?;
            if !seen.insert(name.clone()) {
                return Err(r.error(at, format!("duplicate entry {name}")));
            }
            let rank_at = r.pos;
            let rank = r.len(&format!("rank of {name}"))?;
            if rank > 16 {
                return Err(r.error(rank_at, format!("implausible rank {rank} for {name}")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut numel: usize = 1;
            for _ in 0..rank {
                let ext_at = r.pos;
                let d = r.len(&format!("extent of {name}"))?;
                numel = numel
                    .checked_mul(d)
                    .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
                    .ok_or_else(|| r.error(ext_at, format!("extent {d} of {name} exceeds the file")))?;
                if d == 0 {
                    return Err(r.error(ext_at, format!("zero extent in {name}")));
                }
                shape.push(d);
            }
            let payload = r.take(numel * 4, &format!("payload of {name}"))?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                .collect();
            entries.push(ArchiveEntry { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(r.error(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { entries })
    }

    /// Writes to a temporary sibling file and renames it over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn error(&self, offset: usize, msg: String) -> Error {
        Error::Format {
            offset: offset as u64,
            msg,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.error(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    /// A u64 that must fit in the remaining file when used as a byte count.
    fn len(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = self.u64(what)?;
        if v > self.bytes.len() as u64 {
            return Err(self.error(at, format!("{what} {v} exceeds the file size {}", self.bytes.len())));
        }
        Ok(v as usize)
    }
}

pub fn save(model: &ViTModel, path: &Path) -> Result<()> {
    NamedTensorArchive::from_model(model).save(path)
}

pub fn load(path: &Path) -> Result<NamedTensorArchive> {
    NamedTensorArchive::load(path)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ImportReport {
    /// Copied unchanged.
    pub imported: Vec<String>,
    /// Position embeddings resampled to the model's grid.
    pub interpolated: Vec<String>,
    /// Classifier tensors left at their fresh initialization because the
    /// class count differs.
    pub skipped_head: Vec<String>,
    /// Everything else that did not match; empty in strict mode.
    pub mismatches: Vec<String>,
}

impl ImportReport {
    pub fn summary(&self) -> String {
        let mut s = format!(
            "imported {}, interpolated {}, head skipped {}, mismatched {}",
            self.imported.len(),
            self.interpolated.len(),
            self.skipped_head.len(),
            self.mismatches.len()
        );
        for (label, list) in [
            ("interpolated", &self.interpolated),
            ("head skipped", &self.skipped_head),
            ("mismatch", &self.mismatches),
        ] {
            for n in list {
                s.push_str(&format!("\n  {label}: {n}"));
            }
        }
        s
    }
}

/// Resamples `[1 + s², D]` position embeddings to `[1 + t², D]`: the class
/// row is kept and the `s × s` grid is bilinearly resized to `t × t`.
pub fn interpolate_position_embeddings(pos: &Tensor, target_rows: usize) -> Result<Tensor> {
    let (rows, d) = (pos.shape()[0], pos.shape()[1]);
    let side = |r: usize| -> Option<usize> {
        let n = r.checked_sub(1)?;
        let s = (n as f64).sqrt().round() as usize;
        (s * s == n && s > 0).then_some(s)
    };
    let (Some(s), Some(t)) = (side(rows), side(target_rows)) else {
        return Err(Error::Shape(format!(
            "cannot map {rows} position rows onto {target_rows}: patch counts must be square"
        )));
    };
    let grid = bilinear_resize(&pos.data()[d..], s, s, d, t, t)?;
    let mut data = pos.data()[..d].to_vec();
    data.extend(grid);
    Tensor::from_vec([target_rows, d], data)
}

/// Copies matching tensors from `archive` into a copy of `model`.
///
/// Position embeddings of a different sequence length are interpolated;
/// classifier tensors of a different class count are skipped. Any other
/// missing, unexpected or mis-shaped tensor is a mismatch: an error listing
/// all of them in strict mode, a report entry otherwise.
pub fn import_pretrained(
    archive: &NamedTensorArchive,
    model: &ViTModel,
    strict: bool,
) -> Result<(ViTModel, ImportReport)> {
    let mut out = model.clone();
    let mut report = ImportReport::default();
    let wanted: Vec<(String, Vec<usize>)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.tensor.shape().to_vec()))
        .collect();
    for (name, shape) in &wanted {
        let Some(entry) = archive.get(name) else {
            report.mismatches.push(format!("{name}: missing from archive"));
            continue;
        };
        if &entry.shape == shape {
            out.set_param(name, entry.to_tensor()?)?;
            report.imported.push(name.clone());
        } else if name == names::POS && entry.shape.len() == 2 && entry.shape[1] == shape[1] {
            match interpolate_position_embeddings(&entry.to_tensor()?, shape[0]) {
                Ok(t) => {
                    out.set_param(name, t)?;
                    report
                        .interpolated
                        .push(format!("{name} {:?} -> {shape:?}", entry.shape));
                }
                Err(e) => report.mismatches.push(format!("{name}: {e}")),
            }
        } else if names::is_head(name) && head_differs_only_in_classes(&entry.shape, shape) {
            report
                .skipped_head
                .push(format!("{name} {:?} vs model {shape:?}", entry.shape));
        } else {
            report
                .mismatches
                .push(format!("{name}: archive {:?} vs model {shape:?}", entry.shape));
        }
    }
    for e in archive.entries() {
        if model.param(&e.name).is_none() {
            report.mismatches.push(format!("{}: not a model parameter", e.name));
        }
    }
    if strict && !report.mismatches.is_empty() {
        return Err(Error::Import {
            mismatches: report.mismatches,
        });
    }
    Ok((out, report))
}

fn head_differs_only_in_classes(archive: &[usize], model: &[usize]) -> bool {
    archive.len() == model.len()
        && archive.split_last().map(|(_, r)| r) == model.split_last().map(|(_, r)| r)
}

/// Rebuilds a checkpointed model. Width, depth and heads come from `base`;
/// the class count and input resolution are read off the archive's head
/// and position-embedding shapes. Every tensor must match.
pub fn model_from_archive(archive: &NamedTensorArchive, base: ViTConfig) -> Result<ViTModel> {
    let head = archive
        .get(names::HEAD_B)
        .ok_or_else(|| Error::Import {
            mismatches: vec![format!("{}: missing from archive", names::HEAD_B)],
        })?;
    let pos = archive
        .get(names::POS)
        .ok_or_else(|| Error::Import {
            mismatches: vec![format!("{}: missing from archive", names::POS)],
        })?;
    let n = pos.shape[0].saturating_sub(1);
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n || n == 0 {
        return Err(Error::Shape(format!("{} position rows do not form a square grid", pos.shape[0])));
    }
    let cfg = base
        .with_classes(head.shape[0])
        .with_resolution(side * base.patch_size);
    let (model, _) = import_pretrained(archive, &ViTModel::new(cfg, 0)?, true)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::{preset_config, Variant};

    #[test]
    fn empty_archive_is_header_only() {
        let bytes = NamedTensorArchive::new().to_bytes();
        assert_eq!(bytes.len(), 16);
        assert!(NamedTensorArchive::from_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn bad_magic_names_offset_zero() {
        let mut bytes = NamedTensorArchive::new().to_bytes();
        bytes[3] = b'X';
        let err = NamedTensorArchive::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
    }

    #[test]
    fn own_save_imports_everything() {
        let m = ViTModel::new(preset_config(Variant::Tiny), 4).unwrap();
        let a = NamedTensorArchive::from_model(&m);
        let (back, report) = import_pretrained(&a, &ViTModel::new(*m.config(), 9).unwrap(), true).unwrap();
        assert_eq!(report.imported.len(), m.params().len());
        assert!(report.skipped_head.is_empty() && report.mismatches.is_empty());
        assert_eq!(NamedTensorArchive::from_model(&back), a);
    }

    #[test]
    fn position_interpolation_keeps_class_row() {
        let pos = Tensor::from_vec([5, 1], vec![9.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let out = interpolate_position_embeddings(&pos, 17).unwrap();
        assert_eq!(out.shape(), &[17, 1]);
        assert_eq!(out.data()[0], 9.0);
        assert!(out.data()[1..].iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(interpolate_position_embeddings(&pos, 6).is_err());
    }
}

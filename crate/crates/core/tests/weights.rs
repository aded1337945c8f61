mod common;

use vitkit::vit::{names, preset_config, Variant, ViTModel};
use vitkit::weights::{import_pretrained, load, model_from_archive, save, NamedTensorArchive};
use vitkit::{Error, Tensor};

#[test]
fn hand_built_bytes_decode() {
    // magic, one entry "ab" of shape [2] holding [1.5, -2.0]
    let mut b = b"VITW0001".to_vec();
    b.extend(1u64.to_le_bytes());
    b.extend(2u64.to_le_bytes());
    b.extend(b"ab");
    b.extend(1u64.to_le_bytes());
    b.extend(2u64.to_le_bytes());
    b.extend(1.5f32.to_le_bytes());
    b.extend((-2.0f32).to_le_bytes());
    let a = NamedTensorArchive::from_bytes(&b).unwrap();
    assert_eq!(a.len(), 1);
    let e = &a.entries()[0];
    assert_eq!((e.name.as_str(), e.shape.as_slice(), e.data.as_slice()), ("ab", &[2usize][..], &[1.5f32, -2.0][..]));
    assert_eq!(a.to_bytes(), b);

    let mut truncated = b.clone();
    truncated.pop();
    let err = NamedTensorArchive::from_bytes(&truncated).unwrap_err();
    assert!(matches!(err, Error::Format { offset: 42, .. }), "{err}");
    let mut long = b.clone();
    long.push(0);
    assert!(matches!(NamedTensorArchive::from_bytes(&long), Err(Error::Format { offset: 50, .. })));
}

#[test]
fn tiny_round_trip_through_file() {
    let m = ViTModel::new(preset_config(Variant::Tiny), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.vitw");
    save(&m, &path).unwrap();
    let a = load(&path).unwrap();
    assert_eq!(a, load(&path).unwrap());
    let names: Vec<&str> = a.entries().iter().map(|e| e.name.as_str()).collect();
    let want: Vec<&str> = m.params().iter().map(|p| p.name.as_str()).collect();
    assert_eq!(names, want);
    for (e, p) in a.entries().iter().zip(m.params().iter()) {
        assert_eq!(e.shape, p.tensor.shape());
        for (x, y) in e.data.iter().zip(p.tensor.data()) {
            assert_eq!(*x, *y as f32);
        }
    }
    let restored = model_from_archive(&a, preset_config(Variant::Tiny)).unwrap();
    assert_eq!(restored.config(), m.config());
}

#[test]
fn thousand_class_archive_into_four_class_model() {
    let pre = ViTModel::new(preset_config(Variant::Tiny).with_classes(1000), 1).unwrap();
    let a = NamedTensorArchive::from_model(&pre);
    let target = ViTModel::new(preset_config(Variant::Tiny), 2).unwrap();
    let (m, report) = import_pretrained(&a, &target, false).unwrap();
    assert_eq!(report.skipped_head.len(), 2);
    assert!(report.mismatches.is_empty());
    assert_eq!(m.param(names::HEAD_W), target.param(names::HEAD_W));
    assert_eq!(m.param(names::PROJ_W).unwrap().data(), pre.param(names::PROJ_W).unwrap().data().iter().map(|&v| v as f32 as f64).collect::<Vec<_>>().as_slice());
    // strict mode tolerates the head swap too
    assert!(import_pretrained(&a, &target, true).is_ok());
}

#[test]
fn position_embeddings_from_224_base_grid() {
    // 197 rows: a 14x14 grid plus the class token, as for P=16 at 224px
    let d = 64;
    let mut a = NamedTensorArchive::from_model(&ViTModel::new(preset_config(Variant::Tiny), 0).unwrap());
    let pos = Tensor::randn([197, d], 0.02, &mut common::rng(1));
    let mut rebuilt = NamedTensorArchive::new();
    for e in a.entries() {
        if e.name == names::POS {
            rebuilt.push(names::POS, &pos).unwrap();
        } else {
            rebuilt.push(e.name.clone(), &e.to_tensor().unwrap()).unwrap();
        }
    }
    a = rebuilt;
    let target = ViTModel::new(preset_config(Variant::Tiny), 0).unwrap();
    let (m, report) = import_pretrained(&a, &target, true).unwrap();
    assert_eq!(report.interpolated.len(), 1);
    let got = m.param(names::POS).unwrap();
    assert_eq!(got.shape(), &[65, d]);
    assert_eq!(got.row(0), pos.row(0).iter().map(|&v| v as f32 as f64).collect::<Vec<_>>().as_slice());
    let x = Tensor::uniform([1, 32, 32, 3], -1.0, 1.0, &mut common::rng(2));
    assert!(m.forward(&x).unwrap().is_finite());
}

#[test]
fn strict_import_lists_every_mismatch() {
    let small = ViTModel::new(
        vitkit::vit::ViTConfig {
            hidden_size: 32,
            mlp_size: 64,
            ..preset_config(Variant::Tiny)
        },
        0,
    )
    .unwrap();
    let target = ViTModel::new(preset_config(Variant::Tiny), 0).unwrap();
    let err = import_pretrained(&NamedTensorArchive::from_model(&small), &target, true).unwrap_err();
    let Error::Import { mismatches } = err else { panic!("expected import error") };
    assert!(mismatches.len() > 30, "{}", mismatches.len());
    let (_, report) = import_pretrained(&NamedTensorArchive::from_model(&small), &target, false).unwrap();
    assert_eq!(report.mismatches, mismatches);
}

#[test]
fn failed_save_leaves_existing_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("keep.vitw");
    let m = ViTModel::new(preset_config(Variant::Tiny), 3).unwrap();
    save(&m, &path).unwrap();
    let before = std::fs::read(&path).unwrap();
    assert!(save(&m, &dir.path().join("missing_dir/x.vitw")).is_err());
    assert_eq!(std::fs::read(&path).unwrap(), before);
    let leftovers = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(leftovers, 1);
}

use std::collections::BTreeMap;

use semhallu::store::{
    load_bank, read_bank, write_bank, ActivationMapSet, AttentionMap, Bank, BankFormat, ClassFeatures,
    FeatureBank, SemanticBank, Split,
};
use semhallu::synthetic::{generate, SyntheticSpec};
use semhallu::Error;

/// FSHB bytes assembled field by field from the documented layout.
fn handmade_feature_file(classes: &[(&str, u8, &[f32])], dim: u32) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(b"FSHB");
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&dim.to_le_bytes());
    b.extend_from_slice(&(classes.len() as u32).to_le_bytes());
    for (id, split, data) in classes {
        b.extend_from_slice(&(id.len() as u32).to_le_bytes());
        b.extend_from_slice(id.as_bytes());
        b.push(*split);
        b.extend_from_slice(&((data.len() as u32) / dim).to_le_bytes());
        for v in *data {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b
}

#[test]
fn feature_layout_matches_documented_bytes() {
    let bytes = handmade_feature_file(&[("cat", 0, &[1.0, 2.0, 3.0, 4.0]), ("dög", 2, &[0.5, 0.25])], 2);
    let bank = FeatureBank::decode(&bytes).unwrap();
    assert_eq!(bank.dim, 2);
    assert_eq!(bank.classes[0].class_id, "cat");
    assert_eq!(bank.classes[0].split, Split::Base);
    assert_eq!(bank.classes[0].rows(2), 2);
    assert_eq!(bank.classes[1].split, Split::Novel);
    assert_eq!(bank.encode().unwrap(), bytes);
}

#[test]
fn semantic_layout_matches_documented_bytes() {
    let mut b = Vec::new();
    b.extend_from_slice(b"FSSB");
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&2u32.to_le_bytes());
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(b"a");
    b.extend_from_slice(&(-1.5f32).to_le_bytes());
    b.extend_from_slice(&7.0f32.to_le_bytes());
    let bank = SemanticBank::decode(&b).unwrap();
    assert_eq!(bank.get("a").unwrap(), &[-1.5, 7.0]);
    assert_eq!(bank.encode().unwrap(), b);
}

#[test]
fn synthetic_banks_reload_byte_identical() {
    let (features, semantics) = generate(&SyntheticSpec {
        seed: 17,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let fp = dir.path().join("features.fshb");
    let sp = dir.path().join("semantics.fssb");
    write_bank(&features, &fp).unwrap();
    write_bank(&semantics, &sp).unwrap();
    let f2: FeatureBank = read_bank(&fp).unwrap();
    let s2: SemanticBank = read_bank(&sp).unwrap();
    assert_eq!(f2, features);
    assert_eq!(s2, semantics);
    let fp2 = dir.path().join("again.fshb");
    write_bank(&f2, &fp2).unwrap();
    assert_eq!(std::fs::read(&fp).unwrap(), std::fs::read(&fp2).unwrap());
    assert!(matches!(load_bank(&sp).unwrap(), Bank::Semantics(_)));
}

#[test]
fn activation_maps_round_trip() {
    let mut entries = BTreeMap::new();
    entries.insert(
        ("img_0".to_string(), "base_001".to_string()),
        AttentionMap::new(2, 3, vec![0.0, 0.1, 0.2, 0.5, 0.9, 1.0]).unwrap(),
    );
    entries.insert(
        ("img_1".to_string(), "base_000".to_string()),
        AttentionMap::new(1, 1, vec![0.25]).unwrap(),
    );
    let set = ActivationMapSet { entries };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("maps.fsam");
    write_bank(&set, &path).unwrap();
    match load_bank(&path).unwrap() {
        Bank::ActivationMaps(loaded) => assert_eq!(loaded, set),
        other => panic!("wrong kind {other:?}"),
    }
    assert!(AttentionMap::new(1, 1, vec![1.5]).is_err());
    assert!(AttentionMap::new(2, 2, vec![0.5]).is_err());
}

#[test]
fn error_taxonomy() {
    let good = handmade_feature_file(&[("a", 0, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])], 2);

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    let e = FeatureBank::decode(&bad_magic).unwrap_err();
    assert!(matches!(e, Error::UnrecognizedFormat { .. }));
    assert!(e.to_string().contains("unrecognized format"));

    let mut bad_version = good.clone();
    bad_version[4] = 9;
    assert!(matches!(
        FeatureBank::decode(&bad_version).unwrap_err(),
        Error::UnsupportedVersion { found: 9, .. }
    ));

    // declares three rows, carries two
    let short = &good[..good.len() - 8];
    let e = FeatureBank::decode(short).unwrap_err();
    assert!(matches!(e, Error::Truncated { .. }), "{e}");
    assert!(e.to_string().contains("truncated payload"));

    let mut long = good.clone();
    long.push(0);
    assert!(matches!(
        FeatureBank::decode(&long).unwrap_err(),
        Error::TrailingBytes { .. }
    ));

    let nan = handmade_feature_file(&[("a", 0, &[1.0, f32::NAN])], 2);
    assert!(FeatureBank::decode(&nan).unwrap_err().to_string().contains("invalid bank"));
    let negative = handmade_feature_file(&[("a", 0, &[1.0, -2.0])], 2);
    assert!(FeatureBank::decode(&negative).is_err());
    let duplicate = handmade_feature_file(&[("a", 0, &[1.0, 2.0]), ("a", 2, &[1.0, 2.0])], 2);
    assert!(FeatureBank::decode(&duplicate).is_err());
    let bad_split = handmade_feature_file(&[("a", 7, &[1.0, 2.0])], 2);
    assert!(FeatureBank::decode(&bad_split).is_err());

    assert!(matches!(
        SemanticBank::decode(&good).unwrap_err(),
        Error::UnrecognizedFormat { .. }
    ));
    assert!(matches!(
        load_bank("/nonexistent/features.fshb").unwrap_err(),
        Error::Io { .. }
    ));

    let invalid = FeatureBank {
        dim: 1,
        classes: vec![ClassFeatures::new("x", Split::Base, vec![f32::INFINITY])],
    };
    let dir = tempfile::tempdir().unwrap();
    assert!(write_bank(&invalid, dir.path().join("x.fshb")).is_err());
    assert!(!dir.path().join("x.fshb").exists());
}

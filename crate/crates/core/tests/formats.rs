use std::path::Path;

use nfas_core::atlas::{AtlasTable, Network};
use nfas_core::manifest::Manifest;
use nfas_core::tensor_store::*;
use nfas_core::Error;

fn header(dims: &[u64]) -> Vec<u8> {
    let mut b = b"NFT1".to_vec();
    b.extend_from_slice(&1u16.to_le_bytes());
    b.push(dims.len() as u8);
    for d in dims {
        b.extend_from_slice(&d.to_le_bytes());
    }
    b
}

#[test]
fn byte_layout_by_hand() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.nft");
    write_tensor(&p, &[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    let mut expect = header(&[2, 2]);
    for v in [1.0f64, 2.0, 3.0, 4.0] {
        expect.extend_from_slice(&v.to_le_bytes());
    }
    assert_eq!(bytes, expect);
    let t = read_tensor(&p).unwrap();
    assert_eq!(t.dims, [2, 2]);
    assert_eq!(t.values, [1.0, 2.0, 3.0, 4.0]);
    assert!(!t.quarantined);
}

#[test]
fn three_zeros_take_39_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("z.nft");
    write_tensor(&p, &[3], &[0.0; 3]).unwrap();
    assert_eq!(std::fs::metadata(&p).unwrap().len(), 39);
    assert_eq!(encoded_len(&[3]), 39);
}

#[test]
fn rewrite_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let v: Vec<f64> = (0..6).map(|i| (i as f64).sin() * 1e-300 + i as f64).collect();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    write_tensor(&a, &[2, 3], &v).unwrap();
    write_tensor(&b, &[2, 3], &v).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let t = read_tensor(&a).unwrap();
    assert!(t.values.iter().zip(&v).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn nonfinite_values_are_named_by_index() {
    let dir = tempfile::tempdir().unwrap();
    let err = write_tensor(dir.path().join("n"), &[2], &[1.0, f64::NAN]).unwrap_err();
    assert!(matches!(err, Error::NonFinite { index: 1, .. }), "{err}");
    assert!(err.to_string().contains('1'));
}

#[test]
fn short_data_reports_expected_length() {
    let mut b = header(&[4]);
    b.extend_from_slice(&[0u8; 24]);
    let err = decode_tensor(&b, Path::new("short.nft"), ReadOptions::default()).unwrap_err();
    match err {
        Error::LengthMismatch { expected, actual, .. } => assert_eq!((expected, actual), (32, 24)),
        e => panic!("{e}"),
    }
}

#[test]
fn wrong_magic_and_version() {
    let mut b = header(&[1]);
    b.extend_from_slice(&0f64.to_le_bytes());
    let mut bad = b.clone();
    bad[..4].copy_from_slice(b"XXXX");
    let err = decode_tensor(&bad, Path::new("x"), ReadOptions::default()).unwrap_err();
    assert!(matches!(err, Error::BadMagic { .. }));
    assert!(err.to_string().contains("not an NFT1 file"), "{err}");
    let mut v2 = b;
    v2[4] = 2;
    assert!(matches!(
        decode_tensor(&v2, Path::new("x"), ReadOptions::default()),
        Err(Error::UnsupportedVersion { found: 2, .. })
    ));
}

#[test]
fn quarantine_on_request() {
    let mut b = header(&[2]);
    b.extend_from_slice(&1f64.to_le_bytes());
    b.extend_from_slice(&f64::INFINITY.to_le_bytes());
    assert!(matches!(
        decode_tensor(&b, Path::new("q"), ReadOptions::default()),
        Err(Error::NonFinite { index: 1, .. })
    ));
    let t = decode_tensor(&b, Path::new("q"), ReadOptions { allow_nonfinite: true }).unwrap();
    assert!(t.quarantined);
}

#[test]
fn toy_atlas() {
    let csv = "roi_index,roi_name,network,hemisphere\n0,a,Visual,L\n1,b,Visual,R\n2,c,Default,L\n3,d,Default,R\n";
    let a = AtlasTable::from_reader(csv.as_bytes()).unwrap();
    assert_eq!(a.len(), 4);
    assert_eq!(a.networks(), [Network::Visual, Network::Visual, Network::Default, Network::Default]);
}

#[test]
fn atlas_structure_errors() {
    let head = "roi_index,roi_name,network,hemisphere\n";
    let dup = format!("{head}0,a,Visual,L\n0,b,Visual,R\n");
    let gap = format!("{head}0,a,Visual,L\n2,b,Visual,R\n");
    let motor = format!("{head}0,a,Motor,L\n");
    assert!(matches!(AtlasTable::from_reader(dup.as_bytes()), Err(Error::Atlas(_))));
    assert!(matches!(AtlasTable::from_reader(gap.as_bytes()), Err(Error::Atlas(_))));
    let err = AtlasTable::from_reader(motor.as_bytes()).unwrap_err().to_string();
    for n in Network::ALL {
        assert!(err.contains(n.name()), "{err}");
    }
}

#[test]
fn schaefer_sized_atlas() {
    let mut csv = String::from("roi_index,roi_name,network,hemisphere\n");
    for i in 0..200 {
        let net = Network::ALL[i * 7 / 200].name();
        let hemi = if i < 100 { "LH" } else { "RH" };
        csv.push_str(&format!("{i},7Networks_{hemi}_{net}_{i},{net},{}\n", &hemi[..1]));
    }
    assert_eq!(AtlasTable::from_reader(csv.as_bytes()).unwrap().len(), 200);
}

fn minimal_manifest() -> serde_json::Value {
    serde_json::json!({
        "seed": 1,
        "models": [{"id": "m", "modality": "vision",
                    "trajectories": [{"stimulus": "s", "path": "s.nft"}]}],
        "brain": [{"id": "b", "roi_timeseries": "b.nft", "tr": 2.0, "atlas": "a.csv",
                   "events": [{"stimulus": "s", "onset": 0.0}]}]
    })
}

#[test]
fn manifest_structural_checks() {
    assert!(Manifest::from_json(&minimal_manifest().to_string()).is_ok());
    let mut bad_tr = minimal_manifest();
    bad_tr["brain"][0]["tr"] = 0.0.into();
    assert!(matches!(Manifest::from_json(&bad_tr.to_string()), Err(Error::Manifest(_))));
    let mut no_perm = minimal_manifest();
    no_perm["params"] = serde_json::json!({"n_permutations": 0});
    assert!(Manifest::from_json(&no_perm.to_string()).is_err());
    let mut bad_mod = minimal_manifest();
    bad_mod["models"][0]["modality"] = "smell".into();
    assert!(Manifest::from_json(&bad_mod.to_string()).is_err());
}

#[test]
fn manifest_load_requires_every_path() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("manifest.json");
    std::fs::write(&p, minimal_manifest().to_string()).unwrap();
    let err = Manifest::load(&p).unwrap_err().to_string();
    assert!(err.contains("s.nft") || err.contains("b.nft") || err.contains("a.csv"), "{err}");
}

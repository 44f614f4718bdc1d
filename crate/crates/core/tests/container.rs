use edgeface_core::accounting::count_spec;
use edgeface_core::io::container::read_manifest;
use edgeface_core::io::{load, load_file, save, save_file};
use edgeface_core::{EdgeFaceModel, Variant};

#[test]
fn file_round_trip_is_byte_identical() {
    let model = EdgeFaceModel::build(&Variant::XxSmall.spec(), None, 0).unwrap();
    let dir = std::env::temp_dir().join(format!("edgf-rt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (a, b) = (dir.join("a.edgf"), dir.join("b.edgf"));
    save_file(&model, &a).unwrap();
    let loaded = load_file(&a).unwrap();
    save_file(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(loaded.embed(&probe()).unwrap(), model.embed(&probe()).unwrap());
    std::fs::remove_dir_all(dir).unwrap();
}

fn probe() -> edgeface_core::Tensor {
    edgeface_core::Tensor::from_fn(&[1, 3, 112, 112], |i| ((i % 29) as f32 - 14.0) / 14.0)
}

#[test]
fn low_rank_container_census() {
    let model = EdgeFaceModel::build(&Variant::XSmall.spec(), Some(0.6), 0).unwrap();
    let bytes = save(&model).unwrap();
    let (manifest, _) = read_manifest(&bytes).unwrap();
    let stored: u64 = manifest.tensors.iter().map(|t| t.byte_len / 4).sum();
    assert_eq!(stored, count_spec(&Variant::XSmall.spec(), Some(0.6)).unwrap().total_params);
    assert!(manifest.tensors.iter().any(|t| t.name == "head.fc.lin1.weight" && t.shape == vec![115, 192]));
    assert!(!manifest.tensors.iter().any(|t| t.name.ends_with("fc1.weight") && !t.name.contains("lin")));
    assert!(((stored as f64 / 1e6) - 1.77).abs() <= 0.1 * 1.77);
}

#[test]
fn every_tensor_byte_is_covered_by_a_checksum() {
    let model = EdgeFaceModel::build(&Variant::XxSmall.spec(), Some(0.4), 3).unwrap();
    let good = save(&model).unwrap();
    let (manifest, start) = read_manifest(&good).unwrap();
    for t in manifest.tensors.iter().step_by(7) {
        let mut bad = good.clone();
        bad[start + t.offset as usize + (t.byte_len as usize) / 2] ^= 0x10;
        assert!(load(&bad).is_err(), "{}", t.name);
    }
}

#[test]
fn factorized_model_survives_round_trip() {
    let dense = EdgeFaceModel::build(&Variant::XxSmall.spec(), None, 5).unwrap();
    let (low, report) = dense.factorize(0.5).unwrap();
    assert_eq!(report.len(), dense.linears().len());
    let bytes = save(&low).unwrap();
    assert_eq!(load(&bytes).unwrap(), low);
}

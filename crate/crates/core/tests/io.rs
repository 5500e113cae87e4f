mod common;

use std::fs;

use common::*;
use mfa::error::Error;
use mfa::io::{
    export_samples, load, load_bins, load_csv, load_idx, load_image_dir, load_model, load_raw_f32, save_bins,
    save_model, DataFormat, ExportFormat,
};
use mfa::ndb::{fit_bins, BinOptions};
use ndarray::Array2;

#[test]
fn minimal_idx_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny-idx3-ubyte");
    let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
    bytes.extend([0u8, 32, 64, 96, 128, 160, 192, 255]);
    fs::write(&path, &bytes).unwrap();
    let ds = load_idx(&path).unwrap();
    assert_eq!((ds.n_samples(), ds.dim()), (2, 4));
    assert_eq!(ds.shape_hint, Some((2, 2, 1)));
    assert!(ds.data.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(ds.data[[1, 3]], 1.0);
    assert_eq!(ds.data[[0, 0]], 0.0);

    fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    match load_idx(&path) {
        Err(Error::Truncated { expected, actual }) => assert_eq!((expected, actual), (24, 21)),
        other => panic!("{other:?}"),
    }
    let msg = load_idx(&path).unwrap_err().to_string();
    assert!(msg.contains("24") && msg.contains("21"), "{msg}");

    fs::write(&path, [1u8, 0, 8, 3]).unwrap();
    assert!(matches!(load_idx(&path), Err(Error::BadMagic { .. })));
}

#[test]
fn mnist_training_images() {
    let Some(path) = mnist_file("train-images-idx3-ubyte") else {
        eprintln!("MNIST not found; set MFA_DATA_DIR or populate data/mnist");
        return;
    };
    let ds = load_idx(&path).unwrap();
    assert_eq!((ds.n_samples(), ds.dim()), (60_000, 784));
    assert_eq!(ds.shape_hint, Some((28, 28, 1)));
}

#[test]
fn csv_and_raw() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("a.csv");
    fs::write(&csv, "1,2\n3,4\n").unwrap();
    let ds = load_csv(&csv).unwrap();
    assert_eq!(ds.data, ndarray::array![[1.0, 2.0], [3.0, 4.0]]);
    fs::write(&csv, "1,2\n3\n").unwrap();
    assert!(load_csv(&csv).is_err());

    let raw = dir.path().join("a.f32");
    let bytes: Vec<u8> = (0..8).flat_map(|i| (i as f32 * 0.5).to_le_bytes()).collect();
    fs::write(&raw, &bytes).unwrap();
    let ds = load_raw_f32(&raw, 4).unwrap();
    assert_eq!((ds.n_samples(), ds.dim()), (2, 4));
    assert_eq!(ds.data[[1, 3]], 3.5);
    assert!(load_raw_f32(&raw, 3).is_err());
    assert_eq!(load(&raw, DataFormat::Raw(2)).unwrap().n_samples(), 4);
}

#[test]
fn image_directories() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_image_dir(dir.path()).is_err());
    let mut r = rng(70);
    let imgs = Array2::from_shape_fn((2, 6 * 5 * 3), |_| normal(&mut r).abs().min(1.0));
    for i in 0..2 {
        let single = imgs.slice(ndarray::s![i..i + 1, ..]);
        export_samples(single, &dir.path().join(format!("{i}.png")), ExportFormat::PngGrid((6, 5, 3))).unwrap();
    }
    let ds = load_image_dir(dir.path()).unwrap();
    assert_eq!((ds.n_samples(), ds.dim()), (2, 90));
    assert_eq!(ds.shape_hint, Some((6, 5, 3)));
    for (a, b) in ds.data.iter().zip(imgs.iter()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn model_container_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mfa");
    let mut r = rng(71);
    let model = random_model(&mut r, 3, 7, 2);
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded, model);
    let first = fs::read(&path).unwrap();
    save_model(&loaded, &path).unwrap();
    assert_eq!(fs::read(&path).unwrap(), first);

    let mut bytes = first.clone();
    let last = bytes.len() - 5;
    bytes[last] ^= 0x10;
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Checksum { .. })));
}

#[test]
fn bins_container_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.ndb");
    let mut r = rng(72);
    let x = normal_mat(&mut r, 400, 5);
    let opts = BinOptions { whiten: true, dim_subset: Some(3), n_init: 2, ..BinOptions::default() };
    let bins = fit_bins(x.view(), 8, &opts).unwrap();
    save_bins(&bins, &path).unwrap();
    assert_eq!(load_bins(&path).unwrap(), bins);
    assert!(load_model(&path).is_err());
}

#[test]
fn raw_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.f32");
    let mut r = rng(73);
    let model = random_model(&mut r, 2, 6, 2);
    let s = model.sample(50, 1).unwrap();
    export_samples(s.view(), &path, ExportFormat::RawF32).unwrap();
    let back = load_raw_f32(&path, 6).unwrap().data;
    for (a, b) in back.iter().zip(s.iter()) {
        assert!((a - b).abs() <= f32::EPSILON as f64 * b.abs().max(f32::MIN_POSITIVE as f64));
    }
}

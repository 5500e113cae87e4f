mod common;

use common::*;
use mfa::sharpness::{blur_image, image_sharpness, set_sharpness, SharpnessConfig};
use ndarray::{concatenate, Array1, Array2, Axis};

const SHAPE: (usize, usize, usize) = (32, 32, 1);

fn image_set(n: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    let mut x = Array2::zeros((n, 32 * 32));
    for mut row in x.rows_mut() {
        row.assign(&natural_image(&mut r, 32, 32));
    }
    x
}

fn blurred(x: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let b = blur_image(row.view(), SHAPE, sigma).unwrap();
        row.assign(&b);
    }
    out
}

#[test]
fn white_noise_keeps_most_energy() {
    let mut r = rng(50);
    let cfg = SharpnessConfig::new((64, 64, 1));
    let noise = normal_vec(&mut r, 64 * 64);
    let s = image_sharpness(noise.view(), &cfg).unwrap();
    assert!(s > -0.5 && s < 0.0, "{s}");
    let soft = blur_image(noise.view(), (64, 64, 1), 1.0).unwrap();
    assert!(image_sharpness(soft.view(), &cfg).unwrap() < s);
}

#[test]
fn scale_and_shift_invariance() {
    let cfg = SharpnessConfig::new(SHAPE);
    let img = image_set(1, 51).row(0).to_owned();
    let s = image_sharpness(img.view(), &cfg).unwrap();
    assert!((image_sharpness((&img * 7.0).view(), &cfg).unwrap() - s).abs() < 1e-10);
    assert!((image_sharpness((&img + 3.5).view(), &cfg).unwrap() - s).abs() < 1e-10);
}

#[test]
fn set_of_one_and_duplicates() {
    let cfg = SharpnessConfig::new(SHAPE);
    let x = image_set(5, 52);
    let single = x.slice(ndarray::s![0..1, ..]);
    assert_eq!(set_sharpness(single, &cfg).unwrap(), image_sharpness(x.row(0), &cfg).unwrap());
    let twice = concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
    assert!((set_sharpness(twice.view(), &cfg).unwrap() - set_sharpness(x.view(), &cfg).unwrap()).abs() < 1e-12);
}

#[test]
fn blur_lowers_the_score() {
    let cfg = SharpnessConfig::new(SHAPE);
    for seed in 0..5 {
        let x = image_set(20, 60 + seed);
        let s0 = set_sharpness(x.view(), &cfg).unwrap();
        let s1 = set_sharpness(blurred(&x, 1.0).view(), &cfg).unwrap();
        let s2 = set_sharpness(blurred(&x, 2.0).view(), &cfg).unwrap();
        assert!(s0 > s1 && s1 > s2, "{s0} {s1} {s2}");
    }
}

#[test]
fn degenerate_inputs() {
    let cfg = SharpnessConfig::new((4, 4, 1));
    let flat = Array1::from_elem(16, 0.3);
    assert_eq!(image_sharpness(flat.view(), &cfg).unwrap(), f64::NEG_INFINITY);
    assert!(set_sharpness(flat.view().insert_axis(Axis(0)), &cfg).is_err());
    let zero = SharpnessConfig { sample_count: 0, ..cfg.clone() };
    assert!(set_sharpness(flat.view().insert_axis(Axis(0)), &zero).is_err());
    assert!(set_sharpness(Array2::zeros((1, 15)).view(), &cfg).is_err());
}

#[test]
fn colour_images_use_luminance() {
    let x = image_set(1, 53).row(0).to_owned();
    let rgb = Array1::from_shape_fn(32 * 32 * 3, |p| x[p / 3]);
    let grey = image_sharpness(x.view(), &SharpnessConfig::new(SHAPE)).unwrap();
    let colour = image_sharpness(rgb.view(), &SharpnessConfig::new((32, 32, 3))).unwrap();
    assert!((grey - colour).abs() < 1e-12);
}

mod common;

use common::*;
use mfa::ndb::{bin_exemplars, calibration_ndb, evaluate, fit_bins, js_divergence, two_proportion_z, z_threshold, BinOptions};
use ndarray::{array, Array2};

fn opts() -> BinOptions {
    BinOptions { n_init: 3, ..BinOptions::default() }
}

#[test]
fn face_scale_defaults() {
    let o = BinOptions::celeba_scale();
    assert_eq!(o.cluster_subset, Some(80_000));
    assert_eq!(o.dim_subset, Some(2_000));
    assert!(o.whiten);
    assert_eq!(o.significance, 0.05);
}

#[test]
fn one_bin_holds_everything() {
    let mut r = rng(40);
    let x = normal_mat(&mut r, 50, 3);
    let bins = fit_bins(x.view(), 1, &opts()).unwrap();
    assert_eq!(bins.ref_proportions, array![1.0]);
}

#[test]
fn two_blob_proportions() {
    let mut r = rng(41);
    let n = 1000;
    let x = Array2::from_shape_fn((n, 2), |(i, _)| if i < 300 { 0.0 } else { 20.0 } + normal(&mut r));
    let bins = fit_bins(x.view(), 2, &opts()).unwrap();
    let mut p = bins.ref_proportions.to_vec();
    p.sort_by(f64::total_cmp);
    assert!((p[0] - 0.3).abs() < 1e-12 && (p[1] - 0.7).abs() < 1e-12, "{p:?}");
}

#[test]
fn identical_sets_show_no_difference() {
    let mut r = rng(42);
    let x = ring_gmm(&mut r, 2000, &[0, 1, 2, 3, 4, 5, 6, 7]);
    let bins = fit_bins(x.view(), 20, &opts()).unwrap();
    let rep = evaluate(x.view(), &bins).unwrap();
    assert_eq!(rep.ndb, 0);
    assert_eq!(rep.js_divergence, 0.0);
    assert!(rep.per_bin.iter().all(|b| b.z_score == 0.0 && !b.different));
    assert!(rep.summary_line().starts_with("NDB: 0/20"));
}

#[test]
fn pooled_z_statistic() {
    let z = two_proportion_z(0.6, 100, 0.4, 100);
    assert!((z - 2.8284).abs() < 1e-4);
    // pooled 0.5, SE sqrt(0.005)
    assert!((z - 0.2 / 0.005f64.sqrt()).abs() < 1e-12);
    assert!(z.abs() > z_threshold(0.05));
}

#[test]
fn disjoint_bins_reach_ln2() {
    let js = js_divergence(array![1.0, 0.0].view(), array![0.0, 1.0].view());
    assert!((js - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn calibration_and_collapse() {
    let all = [0, 1, 2, 3, 4, 5, 6, 7];
    let same = calibration_ndb(|n, r| ring_gmm(r, n, &all), 2000, 20, 3, 1, &opts()).unwrap();
    assert!(same <= 0.2, "{same}");

    let mut r = rng(43);
    let reference = ring_gmm(&mut r, 4000, &all);
    let collapsed = ring_gmm(&mut r, 4000, &[0, 2, 4, 6]);
    let bins = fit_bins(reference.view(), 20, &opts()).unwrap();
    assert!(evaluate(collapsed.view(), &bins).unwrap().ndb_over_k > 0.3);

    assert!(calibration_ndb(|n, r| ring_gmm(r, n, &all), 100, 2, 0, 1, &opts()).is_err());
}

#[test]
fn exemplars() {
    let mut r = rng(44);
    let mut x = normal_mat(&mut r, 200, 3);
    let bins = fit_bins(x.view(), 4, &opts()).unwrap();
    assert!(bin_exemplars(x.view(), &bins, 0, 0).unwrap().is_empty());

    x.row_mut(55).assign(&bins.centroids.row(2));
    let listed = bin_exemplars(x.view(), &bins, 2, 200).unwrap();
    assert_eq!(listed[0], 55);

    let labels = bins.assign(x.view()).unwrap();
    let mut want: Vec<(usize, f64)> = (0..200)
        .filter(|&i| labels[i] == 2)
        .map(|i| {
            let d: f64 = x.row(i).iter().zip(bins.centroids.row(2)).map(|(a, b)| (a - b) * (a - b)).sum();
            (i, d)
        })
        .collect();
    want.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    assert_eq!(listed, want.iter().map(|p| p.0).collect::<Vec<_>>());
    assert!(bin_exemplars(x.view(), &bins, 4, 1).is_err());
}

#[test]
fn whitening_and_subsets_round_out_the_options() {
    let mut r = rng(45);
    let mut x = normal_mat(&mut r, 500, 6);
    x.column_mut(0).mapv_inplace(|v| v * 100.0);
    let o = BinOptions { whiten: true, cluster_subset: Some(300), dim_subset: Some(3), ..opts() };
    let bins = fit_bins(x.view(), 10, &o).unwrap();
    assert_eq!(bins.subsample_idx.as_ref().unwrap().len(), 3);
    assert_eq!(bins.n_ref, 500);
    let rep = evaluate(x.view(), &bins).unwrap();
    assert_eq!(rep.ndb, 0);
    assert!(fit_bins(x.view(), 51, &opts()).is_err());
}

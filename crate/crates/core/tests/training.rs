mod common;

use common::*;
use mfa::ndb::{evaluate, fit_bins, BinOptions};
use mfa::train::{
    fit_factor_analyzer, hierarchical_train, init_k_subspaces, init_kmeans_fa, init_random_subspace, initialize,
    sgd_train, subspace_residuals, HierarchicalConfig, InitMethod, TrainConfig,
};
use mfa::MfaModel;
use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

fn cfg(k: usize, l: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 64,
        eval_interval: 0,
        ..TrainConfig::new(k, l)
    }
}

fn nll(model: &MfaModel, x: &Array2<f64>) -> f64 {
    -model.log_likelihood(x.view()).unwrap().0 / x.nrows() as f64
}

#[test]
fn kmeans_init_recovers_planted_means() {
    let mut r = rng(11);
    let planted = MfaModel::from_log_weights(
        vec![
            planted_component(&mut r, 16, 2, 0.0, 0.5, 0.1),
            planted_component(&mut r, 16, 2, 10.0, 0.5, 0.1),
        ],
        Array1::zeros(2),
    )
    .unwrap();
    let x = planted.sample(5000, 1).unwrap();
    let init = init_kmeans_fa(x.view(), &cfg(2, 2)).unwrap();
    assert_eq!(init.n_components(), 2);
    let dist = |a: usize, b: usize| {
        (&init.component(a).mean - &planted.component(b).mean).mapv(|v| v * v).sum().sqrt()
    };
    let best = (dist(0, 0) + dist(1, 1)).min(dist(0, 1) + dist(1, 0));
    let worst_pair = if dist(0, 0) + dist(1, 1) <= dist(0, 1) + dist(1, 0) {
        dist(0, 0).max(dist(1, 1))
    } else {
        dist(0, 1).max(dist(1, 0))
    };
    assert!(worst_pair < 0.1, "{best} {worst_pair}");
    assert!((init.log_pi().mapv(f64::exp).sum() - 1.0).abs() < 1e-10);
}

#[test]
fn single_component_init_is_global() {
    let mut r = rng(12);
    let x = normal_mat(&mut r, 300, 5) * 2.0 + 1.0;
    let mean = x.mean_axis(Axis(0)).unwrap();
    for method in [InitMethod::KMeansFa, InitMethod::KSubspaces] {
        let m = initialize(x.view(), &TrainConfig { init_method: method, ..cfg(1, 2) }).unwrap();
        assert_all_close(&m.component(0).mean, &mean, 1e-10);
    }
    let global = fit_factor_analyzer(x.view(), 2, 1e-6).unwrap();
    let ksub = init_k_subspaces(x.view(), &cfg(1, 2)).unwrap();
    assert_all_close(&ksub.component(0).loadings, &global.loadings, 1e-8);
    assert_all_close(&ksub.component(0).noise_var, &global.noise_var, 1e-10);
}

#[test]
fn constant_data_gives_floor_noise() {
    let x = Array2::from_elem((50, 4), 3.0);
    for method in [InitMethod::KMeansFa, InitMethod::RandomSubspace, InitMethod::KSubspaces] {
        let c = TrainConfig { init_method: method, noise_floor: 1e-8, ..cfg(1, 2) };
        let m = initialize(x.view(), &c).unwrap();
        let comp = m.component(0);
        assert!(comp.noise_var.iter().all(|&v| v == 1e-8), "{method}: {}", comp.noise_var);
        // Loading scales are floored at sqrt(noise_floor).
        assert!(comp.loadings.iter().all(|v| v.abs() <= 1e-4 * (1.0 + 1e-9)), "{method}: {}", comp.loadings);
    }
}

#[test]
fn identical_seed_rows_give_zero_loadings() {
    // Every candidate seed set consists of identical rows.
    let mut x = Array2::from_elem((40, 3), 1.0);
    x.row_mut(0).fill(2.0);
    let m = init_random_subspace(x.slice(ndarray::s![1.., ..]), &cfg(2, 1)).unwrap();
    for c in m.components() {
        assert!(c.loadings.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn init_is_deterministic() {
    let mut r = rng(13);
    let x = normal_mat(&mut r, 200, 4);
    for method in [InitMethod::KMeansFa, InitMethod::RandomSubspace, InitMethod::KSubspaces] {
        let c = TrainConfig { init_method: method, ..cfg(3, 1) };
        assert_eq!(initialize(x.view(), &c).unwrap(), initialize(x.view(), &c).unwrap());
    }
}

fn ring(n: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    let mut x = Array2::zeros((n, 2));
    for mut row in x.rows_mut() {
        let t: f64 = r.gen_range(0.0..std::f64::consts::TAU);
        let rad = 4.0 + 0.2 * normal(&mut r);
        row[0] = rad * t.cos();
        row[1] = rad * t.sin();
    }
    x
}

#[test]
fn ring_smoke() {
    let x = ring(2000, 14);
    let c = TrainConfig { max_steps: 1000, learning_rate: 1e-2, ..cfg(10, 1) };
    let init = initialize(x.view(), &c).unwrap();
    let before = nll(&init, &x);
    assert!(before.is_finite());
    let (trained, logs) = sgd_train(x.view(), None, &init, &c).unwrap();
    assert!(nll(&trained, &x) < before);
    assert_eq!(logs.first().unwrap().step, 0);
    assert_eq!(logs.last().unwrap().step, 1000);
}

#[test]
fn k_subspaces_separates_two_lines() {
    let mut r = rng(15);
    let n = 600;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = Array2::from_shape_fn((n, 2), |(i, j)| {
        if j == 0 {
            (i as f64 * 0.618_034).fract() * 10.0 - 5.0
        } else {
            3.0 * labels[i] as f64 + 0.05 * normal(&mut r)
        }
    });
    let m = init_k_subspaces(x.view(), &TrainConfig { rng_seed: 3, ..cfg(2, 1) }).unwrap();
    let subspaces: Vec<_> = m
        .components()
        .iter()
        .map(|c| {
            let col = c.loadings.column(0).to_owned();
            let norm = col.dot(&col).sqrt();
            (c.mean.clone(), (col / norm).insert_axis(Axis(1)))
        })
        .collect();
    let res = subspace_residuals(x.view(), &subspaces);
    let got: Vec<usize> = res.rows().into_iter().map(|r| if r[0] <= r[1] { 0 } else { 1 }).collect();
    let agree = got.iter().zip(&labels).filter(|(g, l)| (**g == got[0]) == (**l == labels[0])).count();
    assert!(agree as f64 / n as f64 >= 0.95, "{agree}");
}

#[test]
fn residuals_match_explicit_projection() {
    let mut r = rng(16);
    let x = normal_mat(&mut r, 30, 5);
    let subspaces: Vec<(Array1<f64>, Array2<f64>)> = (0..3)
        .map(|_| {
            let raw = normal_mat(&mut r, 5, 2);
            let q = DMatrix::from_fn(5, 2, |i, j| raw[[i, j]]).qr().q();
            (normal_vec(&mut r, 5), Array2::from_shape_fn((5, 2), |(i, j)| q[(i, j)]))
        })
        .collect();
    let res = subspace_residuals(x.view(), &subspaces);
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut best = (0, f64::INFINITY);
        for (c, (mu, u)) in subspaces.iter().enumerate() {
            let xh = &row - mu;
            let resid = &xh - &u.dot(&u.t().dot(&xh));
            let want = resid.dot(&resid);
            assert!((res[[i, c]] - want).abs() < 1e-10 * want.max(1.0));
            if want < best.1 {
                best = (c, want);
            }
        }
        let got = (0..3).min_by(|&a, &b| res[[i, a]].total_cmp(&res[[i, b]])).unwrap();
        assert_eq!(got, best.0);
    }
}

#[test]
fn zero_steps_return_the_input() {
    let mut r = rng(17);
    let model = random_model(&mut r, 2, 4, 1);
    let x = points_near(&mut r, &model, 100);
    let (out, logs) = sgd_train(x.view(), None, &model, &TrainConfig { max_steps: 0, ..cfg(2, 1) }).unwrap();
    assert_eq!(out, model);
    assert_eq!(logs.len(), 1);
}

#[test]
fn gradients_match_finite_differences() {
    let mut r = rng(18);
    let model = random_model(&mut r, 3, 8, 2);
    let batch = points_near(&mut r, &model, 4);
    let errs = gradient_check(&model, batch.view(), 1e-5);
    assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");
}

#[test]
fn planted_component_is_learned() {
    let mut r = rng(19);
    let planted = MfaModel::new(vec![planted_component(&mut r, 16, 2, 0.0, 1.0, 0.3)], Array1::zeros(1)).unwrap();
    let x = planted.sample(10_000, 2).unwrap();
    let held = planted.sample(2_000, 3).unwrap();
    let c = TrainConfig { max_steps: 2000, learning_rate: 1e-3, batch_size: 256, ..cfg(1, 2) };
    let init = initialize(x.view(), &c).unwrap();
    let (trained, _) = sgd_train(x.view(), None, &init, &c).unwrap();
    let gap = (nll(&trained, &held) - nll(&planted, &held)) / 16.0;
    assert!(gap < 0.05, "{gap}");
}

#[test]
fn hierarchical_without_splits_reproduces_the_root() {
    let mut r = rng(20);
    let x = four_blobs(&mut r, 800);
    let c = TrainConfig { max_steps: 300, learning_rate: 1e-2, ..cfg(3, 1) };
    let h = HierarchicalConfig { k_root: 3, total_components: 3, min_samples_per_component: 10 };
    let res = hierarchical_train(x.view(), &c, &h).unwrap();
    assert_eq!(res.allocation, vec![1, 1, 1]);
    assert!((nll(&res.model, &x) - nll(&res.root, &x)).abs() < 0.01);
    let total: f64 = res.model.log_pi().iter().map(|v| v.exp()).sum();
    assert!((total - 1.0).abs() < 1e-10);
}

#[test]
fn hierarchical_split_improves_bin_agreement() {
    let mut r = rng(21);
    let x = four_blobs(&mut r, 4000);
    let held = four_blobs(&mut r, 4000);
    let c = TrainConfig { max_steps: 1500, learning_rate: 1e-2, ..cfg(4, 1) };
    let h = HierarchicalConfig { k_root: 2, total_components: 4, min_samples_per_component: 50 };
    let res = hierarchical_train(x.view(), &c, &h).unwrap();
    assert_eq!(res.model.n_components(), 4);
    let lse = mfa::math::logsumexp(res.model.log_pi().as_slice().unwrap());
    assert!(lse.abs() < 1e-10);
    let bins = fit_bins(held.view(), 20, &BinOptions::default()).unwrap();
    let flat = evaluate(res.model.sample(4000, 5).unwrap().view(), &bins).unwrap();
    let root = evaluate(res.root.sample(4000, 5).unwrap().view(), &bins).unwrap();
    assert!(flat.ndb_over_k < root.ndb_over_k, "{} vs {}", flat.summary_line(), root.summary_line());
}

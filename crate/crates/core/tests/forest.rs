use ndarray::{concatenate, s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sigdim::forest::{fit, ForestParams};
use sigdim::Error;

fn noise_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| StandardNormal.sample(rng))
}

fn r2(y: &[f64], p: &[f64]) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let tot: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    let res: f64 = y.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - res / tot
}

fn exact() -> ForestParams {
    ForestParams {
        n_trees: 3,
        bootstrap: false,
        mtry: None,
        ..ForestParams::default()
    }
}

#[test]
fn constant_target_predicts_the_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = noise_matrix(&mut rng, 50, 4);
    let y = vec![7.25; 50];
    let m = fit(x.view(), &y, &ForestParams { n_trees: 20, ..Default::default() }).unwrap();
    assert!(m.predict(x.view()).unwrap().iter().all(|&p| p == 7.25));
    assert!(m.per_tree_importance.iter().all(|&v| v == 0.0));
}

#[test]
fn full_depth_without_bootstrap_interpolates() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = noise_matrix(&mut rng, 120, 3);
    let y: Vec<f64> = (0..120).map(|_| rng.random::<f64>() * 100.0).collect();
    let m = fit(x.view(), &y, &exact()).unwrap();
    assert_eq!(m.predict(x.view()).unwrap(), y);
}

#[test]
fn xor_pattern_still_interpolates() {
    let x = ndarray::array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
    let y = [0.0, 0.0, 1.0, 1.0];
    let m = fit(x.view(), &y, &ForestParams { mtry: Some(1), ..exact() }).unwrap();
    assert_eq!(m.predict(x.view()).unwrap(), y.to_vec());
}

#[test]
fn step_feature_dominates_noise() {
    let (mut wins, mut zwins) = (0, 0);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = noise_matrix(&mut rng, 200, 2);
        let y: Vec<f64> = x.column(0).iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        let m = fit(x.view(), &y, &ForestParams { n_trees: 50, seed, ..Default::default() }).unwrap();
        let imp = m.mean_importance();
        let z = m.importance_z().unwrap();
        wins += (imp[0] > imp[1]) as usize;
        zwins += (z[0] > z[1]) as usize;
    }
    assert!(wins >= 19 && zwins >= 19, "{wins} {zwins}");
}

#[test]
fn single_tree_prediction_is_its_leaf() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = noise_matrix(&mut rng, 60, 2);
    let y: Vec<f64> = x.column(1).iter().map(|v| v * 3.0).collect();
    let m = fit(x.view(), &y, &ForestParams { n_trees: 1, max_depth: Some(3), ..Default::default() }).unwrap();
    let p = m.predict(x.view()).unwrap();
    for (i, row) in x.outer_iter().enumerate() {
        assert_eq!(p[i], m.trees[0].predict_row(&row.to_vec()));
    }
    assert!(m.trees[0].depth() <= 3);
    assert!(m.importance_z().is_err());
}

#[test]
fn refits_are_bitwise_identical_across_thread_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = noise_matrix(&mut rng, 150, 6);
    let y: Vec<f64> = x.column(2).iter().map(|v| v.sin()).collect();
    let p = ForestParams { n_trees: 40, seed: 99, ..Default::default() };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| fit(x.view(), &y, &p).unwrap());
    let b = four.install(|| fit(x.view(), &y, &p).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.predict(x.view()).unwrap(), b.predict(x.view()).unwrap());
}

#[test]
fn predictions_stay_within_target_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = noise_matrix(&mut rng, 100, 3);
    let y: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
    let m = fit(x.view(), &y, &ForestParams { n_trees: 30, ..Default::default() }).unwrap();
    let (lo, hi) = y.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let q = noise_matrix(&mut rng, 200, 3) * 3.0;
    for p in m.predict(q.view()).unwrap() {
        assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
    }
}

#[test]
fn importance_z_edge_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut x = noise_matrix(&mut rng, 80, 3);
    x.column_mut(2).fill(1.0);
    let y: Vec<f64> = x.column(0).to_vec();
    let m = fit(x.view(), &y, &ForestParams { n_trees: 10, ..Default::default() }).unwrap();
    let z = m.importance_z().unwrap();
    assert_eq!(z[2], 0.0);
    // one usable feature: every tree gives it importance 1
    let x1 = x.slice(s![.., 0..1]).to_owned();
    let m1 = fit(x1.view(), &y, &ForestParams { n_trees: 5, ..Default::default() }).unwrap();
    assert_eq!(m1.importance_z().unwrap()[0], 1.0 / 1e-12);
}

#[test]
fn row_order_does_not_matter_without_bootstrap() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = noise_matrix(&mut rng, 90, 4).mapv(|v| (v * 2.0).round());
    let y: Vec<f64> = x.outer_iter().map(|r| r[0] + 0.5 * r[1] * r[3]).collect();
    let p = ForestParams { n_trees: 5, max_depth: Some(5), mtry: Some(2), ..exact() };
    let m = fit(x.view(), &y, &p).unwrap();
    let mut perm: Vec<usize> = (0..90).collect();
    perm.shuffle(&mut rng);
    let xp = x.select(Axis(0), &perm);
    let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
    let mp = fit(xp.view(), &yp, &p).unwrap();
    let q = noise_matrix(&mut rng, 50, 4) * 2.0;
    assert_eq!(m.predict(q.view()).unwrap(), mp.predict(q.view()).unwrap());
}

#[test]
fn duplicated_feature_keeps_training_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = noise_matrix(&mut rng, 120, 3);
    let y: Vec<f64> = x.outer_iter().map(|r| r[0] * r[1]).collect();
    let p = ForestParams { n_trees: 5, ..exact() };
    let base = r2(&y, &fit(x.view(), &y, &p).unwrap().predict(x.view()).unwrap());
    let xd = concatenate![Axis(1), x, x.slice(s![.., 0..1])];
    let a = fit(xd.view(), &y, &p).unwrap();
    let b = fit(xd.view(), &y, &p).unwrap();
    assert_eq!(a, b);
    let dup = r2(&y, &a.predict(xd.view()).unwrap());
    assert!(dup >= base - 1e-9);
}

#[test]
fn importances_and_thresholds_are_well_formed() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = noise_matrix(&mut rng, 100, 5);
    let y: Vec<f64> = x.outer_iter().map(|r| r[0] - r[4]).collect();
    let m = fit(x.view(), &y, &ForestParams { n_trees: 25, ..Default::default() }).unwrap();
    for row in m.per_tree_importance.outer_iter() {
        assert!(row.iter().all(|&v| v >= 0.0));
        let s = row.sum();
        assert!(s == 0.0 || (s - 1.0).abs() < 1e-12);
    }
    for tree in &m.trees {
        for (f, thr) in tree.splits() {
            let col = x.column(f);
            assert!(col.iter().any(|&v| v < thr) && col.iter().any(|&v| v > thr));
            assert!(!col.iter().any(|&v| v == thr));
        }
    }
}

#[test]
fn invalid_inputs() {
    let x = Array2::<f64>::zeros((1, 2));
    assert!(matches!(fit(x.view(), &[1.0], &ForestParams::default()), Err(Error::TooShort { .. })));
    let x = Array2::<f64>::zeros((4, 2));
    let p = ForestParams { min_samples_leaf: 5, ..Default::default() };
    assert!(matches!(fit(x.view(), &[1.0; 4], &p), Err(Error::InvalidParam(_))));
    assert!(matches!(fit(x.view(), &[1.0; 3], &ForestParams::default()), Err(Error::DimensionMismatch { .. })));
    let m = fit(x.view(), &[1.0; 4], &ForestParams { n_trees: 2, ..Default::default() }).unwrap();
    assert!(matches!(m.predict(Array2::zeros((2, 3)).view()), Err(Error::DimensionMismatch { .. })));
    let mut bad = x.clone();
    bad[(0, 0)] = f64::NAN;
    assert!(fit(bad.view(), &[1.0; 4], &ForestParams::default()).is_err());
}

#[test]
fn model_file_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = noise_matrix(&mut rng, 70, 3);
    let y: Vec<f64> = x.column(1).iter().map(|v| v.exp()).collect();
    let m = fit(x.view(), &y, &ForestParams { n_trees: 12, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("forest.slrf");
    m.save(&path).unwrap();
    let back = sigdim::forest::ForestModel::load(&path).unwrap();
    assert_eq!(back, m);
    std::fs::write(&path, b"SLRFxx").unwrap();
    assert!(matches!(sigdim::forest::ForestModel::load(&path), Err(Error::Format { .. })));
}

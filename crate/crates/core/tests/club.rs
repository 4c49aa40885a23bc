use ddf_core::club::{
    contrastive_log_ratio, estimator_loglik, estimator_update, fit_estimator, log_density, mi_loss, vclub,
    ClubEstimator,
};
use ddf_core::fusion::{FusionConfig, FusionModel, Task};
use ddf_core::numerics::optim::Adam;
use ddf_core::numerics::{Rng, Tape, Tensor};

fn random_estimator(a_dim: usize, b_dim: usize, seed: u64) -> ClubEstimator {
    let mut rng = Rng::new(seed);
    let mut est = ClubEstimator::new(a_dim, b_dim, 6, &mut rng).unwrap();
    for (name, p) in est.params.iter_mut() {
        if name.ends_with(".bias") {
            for v in p.value.data_mut() {
                *v = rng.uniform(-0.5, 0.5);
            }
        }
    }
    est
}

fn naive(a: &Tensor, b: &Tensor, est: &ClubEstimator) -> f64 {
    contrastive_log_ratio(a.rows(), |i, j| log_density(a.row(i), b.row(j), est).unwrap()).unwrap()
}

#[test]
fn batched_vclub_matches_double_loop() {
    let mut rng = Rng::new(1);
    for n in [1, 2, 3, 7, 16, 32] {
        let est = random_estimator(4, 3, n as u64);
        let a = Tensor::new(&[n, 4], rng.normals(n * 4)).unwrap();
        let b = Tensor::new(&[n, 3], rng.normals(n * 3)).unwrap();
        let fast = vclub(&a, &b, &est).unwrap();
        let slow = naive(&a, &b, &est);
        assert!((fast - slow).abs() < 1e-10, "N={n}: {fast} vs {slow}");
        if n == 1 {
            assert_eq!(fast, 0.0);
        }
    }
}

#[test]
fn vclub_invariant_under_joint_permutation() {
    let mut rng = Rng::new(2);
    let est = random_estimator(2, 2, 3);
    let a = Tensor::new(&[6, 2], rng.normals(12)).unwrap();
    let b = Tensor::new(&[6, 2], rng.normals(12)).unwrap();
    let perm = [5, 2, 0, 4, 1, 3];
    let v = vclub(&a, &b, &est).unwrap();
    let vp = vclub(&a.select_rows(&perm), &b.select_rows(&perm), &est).unwrap();
    assert!((v - vp).abs() < 1e-12);
}

#[test]
fn loglik_examples() {
    let est = random_estimator(2, 1, 4);
    let a = Tensor::new(&[1, 2], vec![0.3, -0.7]).unwrap();
    let b = Tensor::new(&[1, 1], vec![1.1]).unwrap();
    let single = estimator_loglik(&a, &b, &est).unwrap();
    assert!((single - log_density(a.row(0), b.row(0), &est).unwrap()).abs() < 1e-14);
    let a2 = Tensor::new(&[2, 2], [a.data(), a.data()].concat()).unwrap();
    let b2 = Tensor::new(&[2, 1], vec![1.1, 1.1]).unwrap();
    assert!((estimator_loglik(&a2, &b2, &est).unwrap() - single).abs() < 1e-14);
}

#[test]
fn mi_loss_model_term_cancels() {
    let est = random_estimator(4, 3, 5);
    let mut rng = Rng::new(6);
    let tape = Tape::new();
    let p = tape.freeze(&est.params).unwrap();
    let s_a = tape.constant(Tensor::new(&[5, 2], rng.normals(10)).unwrap()).unwrap();
    let s_b = tape.constant(Tensor::new(&[5, 2], rng.normals(10)).unwrap()).unwrap();
    let s_c = tape.constant(Tensor::new(&[5, 3], [0.2, -0.4, 1.0].repeat(5)).unwrap()).unwrap();
    let terms = mi_loss(&s_a, &s_b, &s_c, &est, &p).unwrap();
    assert!(terms.model_term.item().unwrap().abs() < 1e-12);

    let one_a = tape.constant(Tensor::new(&[1, 2], vec![0.1, 0.2]).unwrap()).unwrap();
    let one_c = tape.constant(Tensor::new(&[1, 3], vec![0.5, 0.1, -0.3]).unwrap()).unwrap();
    let terms = mi_loss(&one_a, &one_a, &one_c, &est, &p).unwrap();
    assert_eq!(terms.model_term.item().unwrap(), 0.0);
    let specific = Tensor::new(&[1, 4], vec![0.1, 0.2, 0.1, 0.2]).unwrap();
    let ll = estimator_loglik(&specific, &one_c.value(), &est).unwrap();
    assert!((terms.estimator_term.item().unwrap() + ll).abs() < 1e-14);
}

fn correlated(n: usize, rho: f64, rng: &mut Rng) -> (Tensor, Tensor) {
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.normal();
        let e = rng.normal();
        a.push(x);
        b.push(rho * x + (1.0 - rho * rho).sqrt() * e);
    }
    (Tensor::new(&[n, 1], a).unwrap(), Tensor::new(&[n, 1], b).unwrap())
}

#[test]
fn estimator_ascent_is_monotone() {
    let mut monotone = 0;
    for seed in 0..100u64 {
        let mut rng = Rng::new(1000 + seed);
        let (a, b) = correlated(64, 0.8, &mut rng);
        let mut est = ClubEstimator::new(1, 1, 8, &mut rng).unwrap();
        let mut prev = f64::NEG_INFINITY;
        let mut ok = true;
        for _ in 0..100 {
            let ll = estimator_update(&mut est, &a, &b, 0.01).unwrap();
            ok &= ll >= prev;
            prev = ll;
        }
        monotone += ok as usize;
    }
    assert!(monotone >= 95, "{monotone}/100 monotone runs");
}

#[test]
fn estimator_update_leaves_fusion_untouched() {
    let mut rng = Rng::new(7);
    let model = FusionModel::new(FusionConfig::new(3, 3, Task::Regression), &mut rng).unwrap();
    let before = model.params.digest();
    let mut est = model.new_estimator(&mut rng).unwrap();
    let a = Tensor::new(&[4, est.a_dim()], rng.normals(4 * est.a_dim())).unwrap();
    let b = Tensor::new(&[4, est.b_dim()], rng.normals(4 * est.b_dim())).unwrap();
    let est_before = est.params.digest();
    estimator_update(&mut est, &a, &b, 0.1).unwrap();
    assert_ne!(est.params.digest(), est_before);
    assert_eq!(model.params.digest(), before);
    assert!(model.params.iter().all(|(_, p)| p.value.grad().is_none_or(|g| g.iter().all(|&v| v == 0.0))));
}

fn converged_estimate(rho: f64, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let (a, b) = correlated(2000, rho, &mut rng);
    let mut est = ClubEstimator::new(1, 1, 16, &mut rng).unwrap();
    fit_estimator(&mut est, &a, &b, 600, &mut Adam::new(0.01)).unwrap();
    vclub(&a, &b, &est).unwrap()
}

#[test]
fn correlated_gaussian_bound_is_positive() {
    let estimates: Vec<f64> = (0..5).map(|s| converged_estimate(0.8, 10 + s)).collect();
    let hits = estimates.iter().filter(|&&v| v >= 0.3).count();
    assert!(hits >= 4, "{estimates:?}");
}

#[test]
fn independent_pairs_estimate_near_zero() {
    let estimates: Vec<f64> = (0..5).map(|s| converged_estimate(0.0, 20 + s)).collect();
    let hits = estimates.iter().filter(|v| v.abs() <= 0.1).count();
    assert!(hits >= 4, "{estimates:?}");
}

mod common;

use common::*;
use dualrl::filter::{devectorize, measurement_update, propagate, time_update, vectorize, InformationState, PredictedState};
use dualrl::linalg::{min_eigenvalue, spectral_radius};
use dualrl::model::{example_plant, LinearPlantSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn vec3() -> impl Strategy<Value = DVector<f64>> {
    prop::array::uniform3(-5.0f64..5.0).prop_map(|a| DVector::from_row_slice(&a))
}

fn psd3() -> impl Strategy<Value = DMatrix<f64>> {
    prop::array::uniform9(-1.5f64..1.5).prop_map(|a| {
        let l = DMatrix::from_row_slice(3, 3, &a);
        &l * l.transpose()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn observation_jacobian_matches_finite_differences(x in vec3()) {
        let p = example_plant();
        let h = p.observation_jacobian(&x).unwrap();
        for j in 0..3 {
            let fd = central_difference(|d| {
                let mut xs = x.clone();
                xs[j] += d;
                p.observation(&xs).unwrap()[0]
            }, 0.0, 1e-6);
            prop_assert!(close(fd, h[(0, j)], 1e-5, 1e-8, 1e-3), "entry {j}: fd {fd} vs {}", h[(0, j)]);
        }
    }

    #[test]
    fn vectorize_round_trips(mean in vec3(), cov in psd3()) {
        let s = InformationState::new(mean, cov).unwrap();
        let v = vectorize(&s);
        prop_assert_eq!(v.len(), 9);
        prop_assert_eq!(devectorize(&v, 3).unwrap(), s);
    }

    #[test]
    fn zero_jacobian_leaves_prediction_unchanged(x2 in -5.0f64..5.0, x3 in -5.0f64..5.0, cov in psd3(), y in -3.0f64..3.0) {
        let p = example_plant();
        let pred = PredictedState { mean: DVector::from_vec(vec![0.0, x2, x3]), cov: cov + DMatrix::identity(3, 3) * 1e-6 };
        let post = measurement_update(&p, &pred, &DVector::from_element(1, y)).unwrap();
        prop_assert_eq!(&post.mean, &pred.mean);
        prop_assert!((&post.cov - &pred.cov).amax() <= 1e-15 * pred.cov.amax().max(1.0));
    }

    #[test]
    fn deep_negative_estimate_only_grows_uncertainty(x1 in -5.0f64..-3.5, x2 in -1.0f64..1.0, cov in psd3(), y in -2.0f64..2.0) {
        let p = example_plant();
        let s = InformationState::new(DVector::from_vec(vec![x1, x2, 0.0]), cov).unwrap();
        let u = DVector::zeros(1);
        let predicted_only = time_update(&p, &s, &u).unwrap();
        let next = propagate(&p, &s, &u, &DVector::from_element(1, y)).unwrap();
        prop_assert!((next.cov_trace() - predicted_only.cov.trace()).abs() < 1e-6 * predicted_only.cov.trace().max(1.0));
    }

    #[test]
    fn same_seed_same_truth(x in vec3(), u in -5.0f64..5.0, seed in any::<u64>()) {
        let p = example_plant();
        let u = DVector::from_element(1, u);
        let a = p.step_truth(&x, &u, &mut rng(seed)).unwrap();
        let b = p.step_truth(&x, &u, &mut rng(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn empirical_noise_covariance_matches() {
    let p = example_plant();
    let mut r = rng(11);
    let n = 100_000;
    let mut w_acc = DMatrix::<f64>::zeros(3, 3);
    let mut v_acc = 0.0;
    for _ in 0..n {
        let d = p.sample_noise(&mut r);
        w_acc += &d.process_noise * d.process_noise.transpose();
        v_acc += d.measurement_noise[0].powi(2);
    }
    let w_hat = w_acc / n as f64;
    let rel = (&w_hat - p.process_cov()).norm() / p.process_cov().norm();
    assert!(rel < 0.02, "process noise relative error {rel}");
    let v_hat = v_acc / n as f64;
    assert!((v_hat - 0.2).abs() / 0.2 < 0.02, "measurement variance {v_hat}");
}

#[test]
fn example_dynamics_are_stable() {
    let a = LinearPlantSpec::example().state_matrix().unwrap();
    assert!((spectral_radius(&a) - 0.95).abs() < 1e-12);
}

#[test]
fn covariance_stays_psd_over_long_rollout() {
    let p = example_plant();
    let mut r = rng(12);
    let mut x = DVector::from_vec(vec![1.0, -1.0, 0.5]);
    let mut s = InformationState::new(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
    for k in 0..10_000 {
        let u = DVector::from_element(1, r.random_range(-5.0..5.0));
        x = p.step_truth(&x, &u, &mut r).unwrap();
        let y = p.observe(&x, &mut r).unwrap();
        s = propagate(&p, &s, &u, &y).unwrap();
        assert!((&s.cov - s.cov.transpose()).amax() < 1e-12, "asymmetric at {k}");
        let lam = min_eigenvalue(&s.cov);
        assert!(lam >= 1e-12 * (1.0 - 1e-9), "not PSD at {k}: {lam:e}, norm {:e}", s.cov.amax());
    }
}

#[test]
fn ekf_is_a_kalman_filter_on_multi_output_plants() {
    for seed in 0..5 {
        let mut r = rng(40 + seed);
        let plant = random_linear_plant(4, 2, 2, &mut r);
        let mut x = DVector::zeros(4);
        let mut s = InformationState::new(DVector::zeros(4), DMatrix::identity(4, 4)).unwrap();
        let (mut m, mut c) = (s.mean.clone(), s.cov.clone());
        for _ in 0..100 {
            let u = DVector::from_fn(2, |_, _| r.random_range(-1.0..1.0));
            x = plant.model.step_truth(&x, &u, &mut r).unwrap();
            let y = plant.model.observe(&x, &mut r).unwrap();
            s = propagate(&plant.model, &s, &u, &y).unwrap();
            (m, c) = kalman_step(&plant, &m, &c, &u, &y);
            assert!((&s.mean - &m).amax() < 1e-10);
            assert!((&s.cov - &c).amax() < 1e-10);
        }
    }
}

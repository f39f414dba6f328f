use dualrl::baseline::{lqg_policy, solve_discounted_riccati, RiccatiProblem};
use dualrl::filter::InformationState;
use dualrl::model::{example_plant, LinearPlantSpec};
use dualrl::objective::{discounted_return, reward, stage_cost, CostWeights};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn vec3(r: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::array::uniform3(-r..r).prop_map(|a| DVector::from_row_slice(&a))
}

fn psd3() -> impl Strategy<Value = DMatrix<f64>> {
    prop::array::uniform9(-1.5f64..1.5).prop_map(|a| {
        let l = DMatrix::from_row_slice(3, 3, &a);
        &l * l.transpose()
    })
}

fn example_riccati() -> dualrl::baseline::RiccatiSolution {
    let spec = LinearPlantSpec::example();
    let (a, b) = (spec.state_matrix().unwrap(), spec.input_matrix().unwrap());
    let (q, r) = (DMatrix::identity(3, 3), DMatrix::identity(1, 1));
    solve_discounted_riccati(&RiccatiProblem { a: &a, b: &b, q: &q, r: &r, gamma: 0.95 }, 1e-12, 100_000).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn stage_cost_is_monotone_in_covariance(mean in vec3(4.0), lo in psd3(), gap in psd3(), q in psd3(), u in -5.0f64..5.0) {
        let w = CostWeights::new(q, DMatrix::identity(1, 1), 0.95).unwrap();
        let u = DVector::from_element(1, u);
        let small = InformationState::new(mean.clone(), lo.clone()).unwrap();
        let large = InformationState::new(mean, lo + gap).unwrap();
        prop_assert!(stage_cost(&w, &large, &u) >= stage_cost(&w, &small, &u) - 1e-12);
    }

    #[test]
    fn reward_is_nonpositive_and_finite(mean in vec3(10.0), cov in psd3(), u in -5.0f64..5.0) {
        let w = CostWeights::identity(3, 1);
        let r = reward(&w, &InformationState::new(mean, cov).unwrap(), &DVector::from_element(1, u));
        prop_assert!(r <= 0.0 && r.is_finite());
    }

    #[test]
    fn partial_returns_are_cauchy(rewards in prop::collection::vec(-50.0f64..0.0, 1..400)) {
        let w = CostWeights::identity(3, 1);
        let full = discounted_return(&w, &rewards);
        let bound = rewards.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        for n in [0usize, 10, 50, 100] {
            let n = n.min(rewards.len());
            let partial = discounted_return(&w, &rewards[..n]);
            prop_assert!((full - partial).abs() <= 0.95f64.powi(n as i32) * bound / 0.05 + 1e-9);
        }
    }

    #[test]
    fn lqg_ignores_covariance(mean in vec3(5.0), cov in psd3(), extra in psd3()) {
        let sol = example_riccati();
        let p = example_plant();
        let a = InformationState::new(mean.clone(), cov.clone()).unwrap();
        let b = InformationState::new(mean, cov + extra).unwrap();
        prop_assert_eq!(
            lqg_policy(&sol, &a, p.input_lower(), p.input_upper()),
            lqg_policy(&sol, &b, p.input_lower(), p.input_upper())
        );
    }
}

#[test]
fn reward_bounded_below_on_a_box() {
    let w = CostWeights::identity(3, 1);
    let mut worst = 0.0f64;
    for i in 0..11 {
        for j in 0..11 {
            let m = -3.0 + 0.6 * i as f64;
            let s = 0.2 * j as f64;
            let info = InformationState::new(DVector::from_element(3, m), DMatrix::identity(3, 3) * s).unwrap();
            for u in [-5.0, 0.0, 5.0] {
                worst = worst.min(reward(&w, &info, &DVector::from_element(1, u)));
            }
        }
    }
    // 3·9 + 3·2 + 25 at the corner
    assert!((worst + 58.0).abs() < 1e-9, "{worst}");
}

#[test]
fn riccati_solution_is_an_independent_fixed_point() {
    let spec = LinearPlantSpec::example();
    let (a, b) = (spec.state_matrix().unwrap(), spec.input_matrix().unwrap());
    let sol = example_riccati();
    let (q, r, g) = (DMatrix::<f64>::identity(3, 3), 1.0, 0.95);
    let p = &sol.p;
    // P = Q + γAᵀPA − γ²AᵀPB(R+γBᵀPB)⁻¹BᵀPA with scalar R
    let pb = p * &b;
    let denom = r + g * (b.transpose() * &pb)[(0, 0)];
    let rhs = &q + a.transpose() * p * &a * g - a.transpose() * &pb * pb.transpose() * &a * (g * g / denom);
    assert!((rhs - p).amax() < 1e-10);
    let k_ref = -(pb.transpose() * &a) * (g / denom);
    assert!((k_ref - &sol.k).amax() < 1e-12);
    assert!(dualrl::linalg::min_eigenvalue(p) > 0.0);
    assert!(sol.closed_loop_moduli(&a, &b, g).iter().all(|m| *m < 1.0));
}

#[test]
fn undiscounted_riccati_also_converges() {
    let spec = LinearPlantSpec::example();
    let (a, b) = (spec.state_matrix().unwrap(), spec.input_matrix().unwrap());
    let (q, r) = (DMatrix::identity(3, 3), DMatrix::identity(1, 1));
    let sol = solve_discounted_riccati(&RiccatiProblem { a: &a, b: &b, q: &q, r: &r, gamma: 1.0 }, 1e-12, 100_000).unwrap();
    assert!(sol.closed_loop_moduli(&a, &b, 1.0).iter().all(|m| *m < 1.0));
}

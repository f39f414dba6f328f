//! Open-loop EKF run from an observable and an unobservable start.

use dualrl::filter::InformationState;
use dualrl::harness::{rollout, FnPolicy};
use dualrl::model::example_plant;
use dualrl::objective::CostWeights;
use dualrl::sim::episode_rng;
use nalgebra::{DMatrix, DVector};

fn main() -> dualrl::Result<()> {
    let plant = example_plant();
    let weights = CostWeights::identity(3, 1);
    let idle = FnPolicy {
        label: "idle".to_string(),
        f: |_: &InformationState| DVector::zeros(1),
    };
    for (name, start) in [("observable", 3.0), ("unobservable", -3.0)] {
        let x0 = DVector::from_vec(vec![start, 0.0, 0.0]);
        let prior = InformationState::new(x0.clone(), DMatrix::identity(3, 3))?;
        let trace = rollout(&plant, &weights, &idle, &prior, &x0, 60, &mut episode_rng(1, 0))?;
        println!("{name} start x1 = {start}");
        for (k, s) in trace.steps.iter().enumerate().step_by(10) {
            let err = (&s.true_state - &s.estimate).norm();
            println!("  k {k:>3}  |x - xhat| {err:>8.3}  tr(cov) {:>8.3}", s.cov_trace);
        }
    }
    Ok(())
}

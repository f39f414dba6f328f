//! Paired comparison of the certainty-equivalence controller and a learned
//! actor on identical noise.
//!
//! Pass an actor checkpoint to skip training:
//! `cargo run --release --example lqg_vs_rl -- runs/example/actor.json`

use dualrl::agent::{train, DdpgConfig};
use dualrl::baseline::{solve_discounted_riccati, RiccatiProblem};
use dualrl::harness::{compare, default_divergence_threshold, ActorPolicy, CompareOptions, LqgController, Policy};
use dualrl::model::{example_plant, LinearPlantSpec};
use dualrl::neural::Mlp;
use dualrl::objective::CostWeights;
use dualrl::sim::InitialConditionScheme;
use nalgebra::DVector;

fn main() -> dualrl::Result<()> {
    let plant = example_plant();
    let weights = CostWeights::identity(3, 1);
    let actor = match std::env::args().nth(1) {
        Some(path) => Mlp::load(path)?,
        None => {
            println!("training a fresh actor (300 episodes)...");
            train(&plant, &weights, &DdpgConfig::default(), 0)?.0.actor
        }
    };

    let spec = LinearPlantSpec::example();
    let (a, b) = (spec.state_matrix()?, spec.input_matrix()?);
    let problem = RiccatiProblem { a: &a, b: &b, q: &weights.q, r: &weights.r, gamma: weights.gamma };
    let lqg = LqgController::new(solve_discounted_riccati(&problem, 1e-12, 100_000)?, &plant);
    let rl = ActorPolicy::new(actor);

    let opts = CompareOptions {
        n_episodes: 50,
        steps: 200,
        seed: 10_000,
        divergence_threshold: default_divergence_threshold(&plant, &DVector::from_vec(vec![3.0, 0.0, 0.0]))?,
        initial_condition: InitialConditionScheme::default(),
    };
    let policies: [&dyn Policy; 2] = [&lqg, &rl];
    let report = compare(&plant, &weights, &policies, &opts)?.report;
    println!("divergence threshold {:.3}", report.divergence_threshold);
    for p in &report.policies {
        println!(
            "{:<4} median peak tr(cov) {:>9.3}  diverged {:>5.2}  mean return {:>14.3e}",
            p.label, p.median_peak_cov_trace, p.divergent_fraction, p.mean_discounted_return
        );
    }
    Ok(())
}

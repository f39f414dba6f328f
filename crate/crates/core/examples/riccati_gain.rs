//! Certainty-equivalence gain of the example plant under unit weights.

use dualrl::baseline::{solve_discounted_riccati, RiccatiProblem};
use dualrl::model::LinearPlantSpec;
use nalgebra::DMatrix;

fn main() -> dualrl::Result<()> {
    let spec = LinearPlantSpec::example();
    let (a, b) = (spec.state_matrix()?, spec.input_matrix()?);
    let (q, r) = (DMatrix::identity(3, 3), DMatrix::identity(1, 1));
    for gamma in [0.95, 1.0] {
        let sol = solve_discounted_riccati(&RiccatiProblem { a: &a, b: &b, q: &q, r: &r, gamma }, 1e-12, 100_000)?;
        println!("discount {gamma}: {} iterations, residual {:.2e}", sol.iterations, sol.residual);
        println!("P = {:.6}", sol.p);
        println!("K = {:.6}", sol.k);
        println!("closed-loop moduli {:?}", sol.closed_loop_moduli(&a, &b, gamma));
    }
    Ok(())
}
